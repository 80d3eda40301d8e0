#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mosaic/data.hpp"

namespace mosaic {

// query id -> (doc id -> graded relevance >= 0).
using RelevanceJudgments = std::map<std::string, std::map<std::string, int>>;

// Whitespace-separated lines: query_id doc_id relevance.
RelevanceJudgments load_qrels(const std::string& path);

// NDCG@k with burst gain (2^rel - 1) and log2(rank+1) discount; the ideal
// ranking is the judged documents sorted by relevance, truncated at k.
// A query with no relevant documents at all scores 0; *no_relevant reports
// that case when non-null. Duplicate doc ids in the ranking are an error.
double ndcg_at_k(const std::vector<std::string>& ranking,
                 const std::map<std::string, int>& judgments, int64_t k = 10,
                 bool* no_relevant = nullptr);

// Rank correlation with average-rank tie handling (Pearson on fractional
// ranks). A constant input vector is an error.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct QueryScore {
  std::string query_id;
  double score = 0.0;
  bool no_relevant = false;
};

// Per-query scores with boxplot-ready distribution stats. Quartiles use
// linear interpolation on the sorted scores (h = (n-1)p); whiskers are the
// outermost data points within 1.5*IQR of the quartiles.
struct MetricReport {
  std::vector<QueryScore> per_query;
  double mean = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_lo = 0.0;
  double whisker_hi = 0.0;
  int64_t zero_count = 0;
};

MetricReport make_metric_report(std::vector<QueryScore> scores);

struct EvalItem {
  std::string id;
  std::string text;
};

// Embeds the collection once, ranks every query by cosine, and aggregates
// per-query NDCG@k.
MetricReport evaluate_retrieval(const EmbedFn& embed, const std::vector<EvalItem>& queries,
                                const std::vector<EvalItem>& collection,
                                const RelevanceJudgments& judgments, int64_t k = 10);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int64_t n = 0;
};

// Two-sided paired t-test on d = a - b with n-1 degrees of freedom. The
// p-value comes from a continued-fraction regularized incomplete beta,
// accurate to about 1e-6 absolute. Zero variance of d is an error.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Pairs two reports by query id; queries where both systems have no
// relevant documents are left out of the test.
TTestResult paired_t_test_reports(const MetricReport& a, const MetricReport& b);

// I_x(a, b); exposed so tests can pin its accuracy directly.
double regularized_incomplete_beta(double a, double b, double x);

std::string report_csv(const MetricReport& report);
void write_report_csv(const MetricReport& report, const std::string& path);

}  // namespace mosaic
