#include <bit>
#include <cstring>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mosaic/io.hpp"
#include "mosaic/trainer.hpp"

namespace mosaic {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'S', 'C'};

void append_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f64(std::string& buf, double v) { append_u64(buf, std::bit_cast<uint64_t>(v)); }

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  uint32_t read_u32() {
    uint32_t v = 0;
    need(4);
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<size_t>(i)])) << (8 * i);
    pos_ += 4;
    return v;
  }

  uint64_t read_u64() {
    uint64_t v = 0;
    need(8);
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<size_t>(i)])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double read_f64() { return std::bit_cast<double>(read_u64()); }

  std::string read_bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }
  size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size())
      throw std::runtime_error("checkpoint: truncated file " + path_);
  }
  const std::string& buf_;
  std::string path_;
  size_t pos_ = 0;
};

void append_section(std::string& buf, const std::string& name, const std::string& payload) {
  append_u32(buf, static_cast<uint32_t>(name.size()));
  buf += name;
  append_u64(buf, payload.size());
  buf += payload;
}

std::string encode_tensor(const Tensor& t) {
  std::string out;
  append_u32(out, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) append_u64(out, static_cast<uint64_t>(t.shape().dim(i)));
  for (int64_t i = 0; i < t.size(); ++i) append_f64(out, t[i]);
  return out;
}

Tensor decode_tensor(const std::string& payload, const std::string& context) {
  Reader r(payload, context);
  const uint32_t rank = r.read_u32();
  if (rank > 2) throw std::runtime_error("checkpoint: bad tensor rank in " + context);
  Shape shape;
  if (rank == 1) shape = Shape(static_cast<int64_t>(r.read_u64()));
  if (rank == 2) {
    const int64_t d0 = static_cast<int64_t>(r.read_u64());
    const int64_t d1 = static_cast<int64_t>(r.read_u64());
    shape = Shape(d0, d1);
  }
  Tensor t(shape);
  if (r.remaining() != static_cast<size_t>(t.size()) * 8)
    throw std::runtime_error("checkpoint: tensor payload size mismatch in " + context);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = r.read_f64();
  return t;
}

std::string encode_config(const EncoderConfig& c) {
  // Canonical text: sorted key=value lines.
  std::string out;
  out += "dropout=" + format_double(c.dropout) + "\n";
  out += "ff_dim=" + std::to_string(c.ff_dim) + "\n";
  out += "heads=" + std::to_string(c.heads) + "\n";
  out += "layers=" + std::to_string(c.layers) + "\n";
  out += "max_len=" + std::to_string(c.max_len) + "\n";
  out += "model_dim=" + std::to_string(c.model_dim) + "\n";
  out += "seed=" + std::to_string(c.seed) + "\n";
  out += "vocab_size=" + std::to_string(c.vocab_size) + "\n";
  return out;
}

EncoderConfig decode_config(const std::string& text, const std::string& path) {
  EncoderConfig c;
  std::istringstream in(text);
  std::string line;
  int seen = 0;
  while (std::getline(in, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: bad config line in " + path);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    ++seen;
    if (key == "dropout") c.dropout = std::stod(value);
    else if (key == "ff_dim") c.ff_dim = std::stoll(value);
    else if (key == "heads") c.heads = std::stoll(value);
    else if (key == "layers") c.layers = std::stoll(value);
    else if (key == "max_len") c.max_len = std::stoll(value);
    else if (key == "model_dim") c.model_dim = std::stoll(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "vocab_size") c.vocab_size = std::stoll(value);
    else throw std::runtime_error("checkpoint: unknown config key '" + key + "' in " + path);
  }
  if (seen != 8) throw std::runtime_error("checkpoint: incomplete config in " + path);
  return c;
}

}  // namespace

void checkpoint_save(const Checkpoint& checkpoint, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  append_u32(buf, Checkpoint::kFormatVersion);

  append_section(buf, "config", encode_config(checkpoint.weights.config));
  append_section(buf, "stage", checkpoint.stage_label);

  std::string vocab_text;
  for (int64_t i = 0; i < checkpoint.vocab.size(); ++i) {
    vocab_text += checkpoint.vocab.token(i);
    vocab_text += '\n';
  }
  append_section(buf, "vocab", vocab_text);

  std::string domain_text;
  for (int64_t id : checkpoint.vocab.domain_ids_sorted()) {
    domain_text += std::to_string(id);
    domain_text += '\n';
  }
  append_section(buf, "domain", domain_text);

  for (const auto& [name, var] : checkpoint.weights.parameters())
    append_section(buf, "w." + name, encode_tensor(var.value()));

  if (checkpoint.opt_state) {
    append_section(buf, "opt.step", std::to_string(checkpoint.opt_state->step));
    for (const auto& [name, t] : checkpoint.opt_state->m)
      append_section(buf, "opt.m." + name, encode_tensor(t));
    for (const auto& [name, t] : checkpoint.opt_state->v)
      append_section(buf, "opt.v." + name, encode_tensor(t));
  }

  atomic_write_file(path, buf);
}

Checkpoint checkpoint_load(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r(buf, path);
  const std::string magic = r.read_bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = r.read_u32();
  if (version != Checkpoint::kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version) +
                             " in " + path);

  std::map<std::string, std::string> sections;
  while (!r.at_end()) {
    const uint32_t name_len = r.read_u32();
    const std::string name = r.read_bytes(name_len);
    const uint64_t payload_len = r.read_u64();
    if (!sections.emplace(name, r.read_bytes(payload_len)).second)
      throw std::runtime_error("checkpoint: duplicate section '" + name + "' in " + path);
  }

  auto take = [&](const std::string& name) {
    auto it = sections.find(name);
    if (it == sections.end())
      throw std::runtime_error("checkpoint: missing section '" + name + "' in " + path);
    std::string payload = std::move(it->second);
    sections.erase(it);
    return payload;
  };

  Checkpoint ck;
  const EncoderConfig config = decode_config(take("config"), path);
  ck.stage_label = take("stage");

  {
    const std::string vocab_text = take("vocab");
    const std::string domain_text = take("domain");
    std::vector<std::string> tokens;
    std::istringstream in(vocab_text);
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    if (static_cast<int64_t>(tokens.size()) != config.vocab_size)
      throw std::runtime_error("checkpoint: vocab size disagrees with config in " + path);

    std::vector<int64_t> domain_ids;
    std::istringstream din(domain_text);
    while (std::getline(din, line))
      if (!line.empty()) domain_ids.push_back(std::stoll(line));

    Vocab vocab = Vocab::with_specials();
    for (int64_t i = 0; i < Vocab::kNumSpecials; ++i)
      if (tokens[static_cast<size_t>(i)] != vocab.token(i))
        throw std::runtime_error("checkpoint: special tokens corrupted in " + path);
    std::set<int64_t> domain_set(domain_ids.begin(), domain_ids.end());
    for (size_t i = static_cast<size_t>(Vocab::kNumSpecials); i < tokens.size(); ++i)
      vocab.add_token(tokens[i], domain_set.count(static_cast<int64_t>(i)) > 0);
    ck.vocab = std::move(vocab);
  }

  ck.weights = empty_weights(config);
  for (const auto& [name, var] : ck.weights.parameters()) {
    Var v = var;
    Tensor t = decode_tensor(take("w." + name), path + ":" + name);
    if (t.shape() != v.value().shape())
      throw std::runtime_error("checkpoint: shape mismatch for weight '" + name + "' in " + path);
    v.mutable_value() = std::move(t);
  }

  if (sections.count("opt.step")) {
    TrainState state;
    state.step = std::stoll(take("opt.step"));
    std::vector<std::string> names;
    for (const auto& [name, payload] : sections) {
      (void)payload;
      names.push_back(name);
    }
    for (const auto& name : names) {
      if (name.rfind("opt.m.", 0) == 0)
        state.m[name.substr(6)] = decode_tensor(take(name), path + ":" + name);
      else if (name.rfind("opt.v.", 0) == 0)
        state.v[name.substr(6)] = decode_tensor(take(name), path + ":" + name);
    }
    ck.opt_state = std::move(state);
  }

  if (!sections.empty())
    throw std::runtime_error("checkpoint: unexpected section '" + sections.begin()->first +
                             "' in " + path);
  return ck;
}

}  // namespace mosaic
