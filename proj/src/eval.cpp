#include "lgsid/eval.hpp"

#include "lgsid/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace lgsid {

namespace {

std::vector<ItemId> corpus_ids(const Corpus& corpus) {
  std::vector<ItemId> ids(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) ids[i] = corpus[i].item_id;
  return ids;
}

void check_retrieval_args(const Matrix& embeddings, const Corpus& corpus, int k) {
  if (static_cast<std::size_t>(embeddings.rows()) != corpus.size())
    throw ValidationError("embeddings", "row count does not match corpus size");
  if (k < 1) throw ValidationError("k", "must be >= 1");
  if (static_cast<std::size_t>(k) >= corpus.size())
    throw ValidationError("k", "must be smaller than the corpus size");
}

std::size_t effective_k(const std::vector<Eigen::Index>& list, int k) {
  return k <= 0 ? list.size() : std::min(list.size(), static_cast<std::size_t>(k));
}

double entropy_of(const std::unordered_map<std::int64_t, double>& counts, double n) {
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    if (c > 0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::vector<ItemId> retrieve_topk(std::size_t query_index, const Matrix& embeddings,
                                  const Corpus& corpus, int k) {
  const Eigen::Index q = static_cast<Eigen::Index>(query_index);
  if (query_index >= corpus.size()) throw ValidationError("query", "index out of range");
  auto lists = retrieve_topk_batch(std::span<const Eigen::Index>(&q, 1), embeddings, corpus, k);
  std::vector<ItemId> out;
  out.reserve(lists[0].size());
  for (auto j : lists[0]) out.push_back(corpus[static_cast<std::size_t>(j)].item_id);
  return out;
}

std::vector<std::vector<Eigen::Index>> retrieve_topk_batch(std::span<const Eigen::Index> queries,
                                                           const Matrix& embeddings,
                                                           const Corpus& corpus, int k) {
  check_retrieval_args(embeddings, corpus, k);
  const auto ids = corpus_ids(corpus);
  return kernels::topk_inner_product(embeddings, queries, k, ids);
}

Coverage coverage_metrics(const Corpus& corpus, std::span<const Eigen::Index> queries,
                          const std::vector<std::vector<Eigen::Index>>& retrieved, int k) {
  if (queries.size() != retrieved.size())
    throw ValidationError("retrieved", "one list per query required");
  Coverage c;
  if (queries.empty()) return c;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const Item& target = corpus[static_cast<std::size_t>(queries[q])];
    const std::size_t n = effective_k(retrieved[q], k);
    if (n == 0) continue;
    int p = 0, ci = 0, t = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto idx = static_cast<std::size_t>(retrieved[q][j]);
      if (idx >= corpus.size()) throw ValidationError("retrieved", "index out of range");
      const Item& it = corpus[idx];
      p += it.province_id == target.province_id;
      ci += it.city_id == target.city_id;
      t += it.town_id == target.town_id;
    }
    c.province += static_cast<double>(p) / static_cast<double>(n);
    c.city += static_cast<double>(ci) / static_cast<double>(n);
    c.town += static_cast<double>(t) / static_cast<double>(n);
  }
  const double m = static_cast<double>(queries.size());
  c.province /= m;
  c.city /= m;
  c.town /= m;
  return c;
}

double semantic_similarity(std::span<const Eigen::Index> queries,
                           const std::vector<std::vector<Eigen::Index>>& retrieved,
                           const Matrix& reference_embeddings, int k) {
  if (queries.size() != retrieved.size())
    throw ValidationError("retrieved", "one list per query required");
  if (queries.empty()) return 0.0;
  double total = 0.0;
  const Eigen::Index d = reference_embeddings.cols();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const std::size_t n = effective_k(retrieved[q], k);
    if (n == 0) continue;
    const double* a = reference_embeddings.row(queries[q]).data();
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      s += kernels::detail::inner_product(a, reference_embeddings.row(retrieved[q][j]).data(), d);
    total += s / static_cast<double>(n);
  }
  return total / static_cast<double>(queries.size());
}

double nmi(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
  if (a.size() != b.size()) throw ValidationError("labels", "length mismatch");
  if (a.empty()) throw ValidationError("labels", "empty");
  const double n = static_cast<double>(a.size());
  std::unordered_map<std::int64_t, double> ca, cb;
  std::map<std::pair<std::int64_t, std::int64_t>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    joint[{a[i], b[i]}] += 1;
  }
  const double ha = entropy_of(ca, n);
  const double hb = entropy_of(cb, n);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  if (ha == 0.0 || hb == 0.0) return 0.0;
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    const double pxy = c / n;
    mi += pxy * std::log(pxy / ((ca[key.first] / n) * (cb[key.second] / n)));
  }
  return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

namespace {

double nearest_rank(const std::vector<std::size_t>& sorted, double pct) {
  if (pct < 0.0 || pct > 100.0) throw ValidationError("percentile", "must be in [0, 100]");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return static_cast<double>(sorted[rank - 1]);
}

std::vector<std::size_t> populations_at(std::span<const SemanticID> sids, int level) {
  std::map<int, std::size_t> counts;
  for (const auto& s : sids) {
    if (level < 1 || static_cast<std::size_t>(level) > s.tokens.size())
      throw ValidationError("level", "out of range for SID length");
    ++counts[s.tokens[static_cast<std::size_t>(level - 1)]];
  }
  std::vector<std::size_t> pops;
  pops.reserve(counts.size());
  for (const auto& [_, c] : counts) pops.push_back(c);
  std::sort(pops.begin(), pops.end());
  return pops;
}

}  // namespace

std::vector<double> token_quantiles(std::span<const SemanticID> sids, int level,
                                    std::span<const double> percentiles) {
  if (sids.empty()) throw ValidationError("sids", "empty");
  const auto pops = populations_at(sids, level);
  std::vector<double> out;
  out.reserve(percentiles.size());
  for (double p : percentiles) out.push_back(nearest_rank(pops, p));
  return out;
}

TokenStats token_stats(std::span<const SemanticID> sids, std::span<const double> percentiles) {
  if (sids.empty()) throw ValidationError("sids", "empty");
  TokenStats st;
  const int levels = static_cast<int>(sids.front().tokens.size());
  for (int l = 1; l <= levels; ++l) {
    auto pops = populations_at(sids, l);
    std::vector<double> q;
    for (double p : percentiles) q.push_back(nearest_rank(pops, p));
    st.populations.push_back(std::move(pops));
    st.quantiles.push_back(std::move(q));
  }
  std::set<std::vector<int>> seen;
  for (const auto& s : sids) {
    if (!seen.insert(s.tokens).second) ++st.collisions;
  }
  return st;
}

const RetrievalRow& RetrievalReport::at(int k) const {
  for (const auto& r : rows) {
    if (r.k == k) return r;
  }
  throw ValidationError("k", "not present in report: " + std::to_string(k));
}

RetrievalReport evaluate_retrieval(const Corpus& corpus, const Matrix& policy_embeddings,
                                   const Matrix& reference_embeddings,
                                   std::span<const Eigen::Index> queries, std::span<const int> ks) {
  if (ks.empty()) throw ValidationError("ks", "empty");
  if (reference_embeddings.rows() != policy_embeddings.rows())
    throw ValidationError("reference_embeddings", "row count mismatch");
  const int kmax = *std::max_element(ks.begin(), ks.end());
  const auto lists = retrieve_topk_batch(queries, policy_embeddings, corpus, kmax);
  RetrievalReport report;
  for (int k : ks) {
    RetrievalRow row;
    row.k = k;
    row.similarity = semantic_similarity(queries, lists, reference_embeddings, k);
    row.coverage = coverage_metrics(corpus, queries, lists, k);
    report.rows.push_back(row);
  }
  return report;
}

std::vector<Eigen::Index> sample_queries(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<Eigen::Index> all(n);
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  if (count >= n) return all;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<MetricRecord> retrieval_records(const std::string& variant, const RetrievalReport& r,
                                            std::uint64_t seed) {
  std::vector<MetricRecord> out;
  for (const auto& row : r.rows) {
    out.push_back({variant, "similarity", row.k, row.similarity, seed});
    out.push_back({variant, "province", row.k, row.coverage.province, seed});
    out.push_back({variant, "city", row.k, row.coverage.city, seed});
    out.push_back({variant, "town", row.k, row.coverage.town, seed});
  }
  return out;
}

void write_metrics_csv(std::span<const MetricRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "variant,metric,k,value,seed\n";
  out << std::setprecision(17);
  for (const auto& r : records)
    out << r.variant << ',' << r.metric << ',' << r.k << ',' << r.value << ',' << r.seed << '\n';
}

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::vector<MetricRecord> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "variant,metric,k,value,seed")
        throw ParseError(lineno, "header", "unexpected metric file header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ParseError(lineno, "row", "expected 5 columns");
    MetricRecord r;
    r.variant = cells[0];
    r.metric = cells[1];
    try {
      r.k = std::stoi(cells[2]);
      r.value = std::stod(cells[3]);
      r.seed = std::stoull(cells[4]);
    } catch (const std::exception&) {
      throw ParseError(lineno, "value", "malformed number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

const std::vector<std::pair<std::string, std::string>> kColumnMetrics = {
    {"similarity", "Top"}, {"province", "P"}, {"city", "C"}, {"town", "T"}};

}  // namespace

AblationTable ablation_report(std::span<const MetricRecord> records,
                              std::span<const std::string> variants, std::span<const int> ks) {
  std::map<std::tuple<std::string, std::string, int>, std::pair<double, int>> acc;
  for (const auto& r : records) {
    auto& slot = acc[{r.variant, r.metric, r.k}];
    slot.first += r.value;
    slot.second += 1;
  }
  AblationTable t;
  for (const auto& [metric, label] : kColumnMetrics) {
    for (int k : ks) t.columns.push_back(label + "@" + std::to_string(k));
  }
  for (const auto& v : variants) {
    t.rows.push_back(v);
    std::vector<std::optional<double>> row;
    bool any = false;
    for (const auto& [metric, _] : kColumnMetrics) {
      for (int k : ks) {
        auto it = acc.find({v, metric, k});
        if (it == acc.end()) {
          row.emplace_back();
        } else {
          row.emplace_back(it->second.first / it->second.second);
          any = true;
        }
      }
    }
    if (!any) t.warnings.push_back("variant " + v + " has no metrics; row left empty");
    t.values.push_back(std::move(row));
  }
  const auto find_row = [&](const std::string& name) -> const std::vector<std::optional<double>>* {
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.rows[i] == name) return &t.values[i];
    }
    return nullptr;
  };
  const auto* origin = find_row("Origin");
  const auto* best = find_row("G-DPO");
  t.improvement.assign(t.columns.size(), std::nullopt);
  for (const auto& row : t.values) {
    std::vector<std::optional<double>> d(t.columns.size());
    for (std::size_t c = 0; origin && c < t.columns.size(); ++c) {
      if (row[c] && (*origin)[c]) d[c] = *row[c] - *(*origin)[c];
    }
    t.deltas.push_back(std::move(d));
  }
  if (origin && best) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      const auto& o = (*origin)[c];
      const auto& g = (*best)[c];
      if (o && g && *o != 0.0) t.improvement[c] = (*g - *o) / *o;
    }
  }
  return t;
}

std::string AblationTable::markdown() const {
  std::ostringstream os;
  os << "| Variant |";
  for (const auto& c : columns) os << ' ' << c << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << "| " << rows[r] << " |";
    for (const auto& v : values[r]) os << ' ' << (v ? fmt(*v) : std::string("-")) << " |";
    os << '\n';
  }
  os << "| IMP |";
  for (const auto& v : improvement) {
    os << ' ' << (v ? (*v >= 0 ? "+" : "") + fmt(*v * 100.0) + "%" : std::string("-")) << " |";
  }
  os << "\n\nDelta vs Origin:\n\n| Variant |";
  for (const auto& c : columns) os << ' ' << c << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << "| " << rows[r] << " |";
    for (const auto& v : deltas[r]) os << ' ' << (v ? (*v >= 0 ? "+" : "") + fmt(*v) : std::string("-")) << " |";
    os << '\n';
  }
  return os.str();
}

std::string AblationTable::csv() const {
  std::ostringstream os;
  os << "variant";
  for (const auto& c : columns) os << ',' << c;
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << rows[r];
    for (const auto& v : values[r]) os << ',' << (v ? fmt(*v) : std::string());
    os << '\n';
  }
  os << "IMP";
  for (const auto& v : improvement) os << ',' << (v ? fmt(*v) : std::string());
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << rows[r] << " delta";
    for (const auto& v : deltas[r]) os << ',' << (v ? fmt(*v) : std::string());
    os << '\n';
  }
  return os.str();
}

}  // namespace lgsid
