#include "mosaic/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mosaic/io.hpp"

namespace mosaic {

RelevanceJudgments load_qrels(const std::string& path) {
  RelevanceJudgments judgments;
  std::istringstream in(read_file(path));
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string qid, docid, rel_text, extra;
    if (!(fields >> qid)) continue;  // blank line
    if (!(fields >> docid >> rel_text) || (fields >> extra))
      throw std::runtime_error("qrels: expected 'query_id doc_id relevance' at " + path + ":" +
                               std::to_string(line_no));
    int rel = 0;
    try {
      rel = std::stoi(rel_text);
    } catch (const std::exception&) {
      throw std::runtime_error("qrels: bad relevance value at " + path + ":" + std::to_string(line_no));
    }
    if (rel < 0)
      throw std::runtime_error("qrels: negative relevance at " + path + ":" + std::to_string(line_no));
    judgments[qid][docid] = rel;
  }
  return judgments;
}

double ndcg_at_k(const std::vector<std::string>& ranking,
                 const std::map<std::string, int>& judgments, int64_t k, bool* no_relevant) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  {
    std::set<std::string> seen;
    for (const auto& id : ranking)
      if (!seen.insert(id).second)
        throw std::invalid_argument("ndcg_at_k: duplicate doc id '" + id + "' in ranking");
  }

  std::vector<int> judged;
  judged.reserve(judgments.size());
  for (const auto& [doc, rel] : judgments) {
    (void)doc;
    judged.push_back(rel);
  }
  std::sort(judged.begin(), judged.end(), std::greater<int>());

  double idcg = 0.0;
  for (int64_t i = 0; i < std::min<int64_t>(k, static_cast<int64_t>(judged.size())); ++i)
    idcg += (std::pow(2.0, judged[static_cast<size_t>(i)]) - 1.0) /
            std::log2(static_cast<double>(i + 2));
  if (idcg == 0.0) {
    if (no_relevant) *no_relevant = true;
    return 0.0;
  }
  if (no_relevant) *no_relevant = false;

  double dcg = 0.0;
  for (int64_t i = 0; i < std::min<int64_t>(k, static_cast<int64_t>(ranking.size())); ++i) {
    auto it = judgments.find(ranking[static_cast<size_t>(i)]);
    if (it == judgments.end()) continue;
    dcg += (std::pow(2.0, it->second) - 1.0) / std::log2(static_cast<double>(i + 2));
  }
  return dcg / idcg;
}

namespace {

// Fractional ranks (1-based) with tied values sharing the average rank.
std::vector<double> fractional_ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return sxy / std::sqrt(sxx * syy);
}

bool is_constant(const std::vector<double>& x) {
  for (double v : x)
    if (v != x[0]) return false;
  return true;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least 2 points");
  if (is_constant(x) || is_constant(y))
    throw std::invalid_argument("spearman: correlation undefined for a constant input");
  return pearson(fractional_ranks(x), fractional_ranks(y));
}

namespace {

// Type-7 quantile: linear interpolation at h = (n-1)p on the sorted values.
double quantile_sorted(const std::vector<double>& sorted, double p) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = static_cast<double>(n - 1) * p;
  const size_t lo = static_cast<size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

MetricReport make_metric_report(std::vector<QueryScore> scores) {
  if (scores.empty()) throw std::invalid_argument("metric report: no query scores");
  MetricReport report;
  report.per_query = std::move(scores);

  std::vector<double> values;
  values.reserve(report.per_query.size());
  double sum = 0.0;
  for (const auto& q : report.per_query) {
    values.push_back(q.score);
    sum += q.score;
    if (q.score == 0.0) report.zero_count += 1;
  }
  report.mean = sum / static_cast<double>(values.size());

  std::sort(values.begin(), values.end());
  report.q1 = quantile_sorted(values, 0.25);
  report.median = quantile_sorted(values, 0.5);
  report.q3 = quantile_sorted(values, 0.75);
  const double iqr = report.q3 - report.q1;
  const double lo_limit = report.q1 - 1.5 * iqr;
  const double hi_limit = report.q3 + 1.5 * iqr;
  report.whisker_lo = values.back();
  report.whisker_hi = values.front();
  for (double v : values) {
    if (v >= lo_limit) {
      report.whisker_lo = v;
      break;
    }
  }
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    if (*it <= hi_limit) {
      report.whisker_hi = *it;
      break;
    }
  }
  return report;
}

MetricReport evaluate_retrieval(const EmbedFn& embed, const std::vector<EvalItem>& queries,
                                const std::vector<EvalItem>& collection,
                                const RelevanceJudgments& judgments, int64_t k) {
  if (queries.empty() || collection.empty())
    throw std::invalid_argument("evaluate_retrieval: queries and collection must be non-empty");

  std::vector<std::vector<double>> doc_embs;
  std::vector<std::string> doc_ids;
  doc_embs.reserve(collection.size());
  doc_ids.reserve(collection.size());
  for (const auto& item : collection) {
    doc_embs.push_back(embed(item.text));
    doc_ids.push_back(item.id);
  }
  CosineIndex index(doc_embs, doc_ids);

  static const std::map<std::string, int> kNoJudgments;
  std::vector<QueryScore> scores;
  scores.reserve(queries.size());
  for (const auto& q : queries) {
    const auto hits = index.top_k(embed(q.text), k);
    std::vector<std::string> ranking;
    ranking.reserve(hits.size());
    for (const auto& [id, score] : hits) {
      (void)score;
      ranking.push_back(id);
    }
    auto jit = judgments.find(q.id);
    const auto& judged = jit == judgments.end() ? kNoJudgments : jit->second;
    QueryScore qs;
    qs.query_id = q.id;
    qs.score = ndcg_at_k(ranking, judged, k, &qs.no_relevant);
    scores.push_back(std::move(qs));
  }
  return make_metric_report(std::move(scores));
}

namespace {

// Continued fraction for the incomplete beta (Lentz's algorithm).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("incomplete beta: continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("incomplete beta: a,b must be positive");
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete beta: x must be in [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  const int64_t n = static_cast<int64_t>(a.size());
  if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");

  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0)
    throw std::runtime_error("paired_t_test: zero variance of the differences (degenerate)");

  TTestResult result;
  result.n = n;
  result.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double df = static_cast<double>(n - 1);
  result.p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + result.t * result.t));
  return result;
}

TTestResult paired_t_test_reports(const MetricReport& a, const MetricReport& b) {
  std::map<std::string, const QueryScore*> b_by_id;
  for (const auto& q : b.per_query) b_by_id[q.query_id] = &q;
  std::vector<double> xa, xb;
  for (const auto& q : a.per_query) {
    auto it = b_by_id.find(q.query_id);
    if (it == b_by_id.end()) continue;
    if (q.no_relevant && it->second->no_relevant) continue;
    xa.push_back(q.score);
    xb.push_back(it->second->score);
  }
  return paired_t_test(xa, xb);
}

std::string report_csv(const MetricReport& report) {
  std::string out = "query_id,score\n";
  for (const auto& q : report.per_query) {
    out += q.query_id;
    out += ',';
    out += format_double(q.score);
    out += '\n';
  }
  out += "summary,mean,q1,median,q3,whisker_lo,whisker_hi,zero_count\n";
  out += "values," + format_double(report.mean) + ',' + format_double(report.q1) + ',' +
         format_double(report.median) + ',' + format_double(report.q3) + ',' +
         format_double(report.whisker_lo) + ',' + format_double(report.whisker_hi) + ',' +
         std::to_string(report.zero_count) + '\n';
  return out;
}

void write_report_csv(const MetricReport& report, const std::string& path) {
  atomic_write_file(path, report_csv(report));
}

}  // namespace mosaic
