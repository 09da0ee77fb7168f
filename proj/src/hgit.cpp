#include "lgsid/hgit.hpp"

#include "lgsid/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace lgsid {

namespace {

constexpr int kLloydRounds = 100;

constexpr char kCodebookMagic[8] = {'L', 'G', 'S', 'I', 'D', 'C', 'B', '1'};

double scaled(std::int32_t id, int card) { return card > 0 ? static_cast<double>(id) / card : 0.0; }

double minmax(double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; }

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw DivergenceError(std::string(what) + " became non-finite");
}

void nearest(const Matrix& points, const Matrix& centers, std::vector<int>& z,
             std::vector<double>& d2) {
  z.assign(static_cast<std::size_t>(points.rows()), 0);
  d2.assign(static_cast<std::size_t>(points.rows()), 0.0);
  kernels::nearest_centers(points, centers, z, d2);
}

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace

FeatureScaling FeatureScaling::from_corpus(const Corpus& corpus) {
  FeatureScaling s;
  s.cards = corpus.cardinalities();
  if (corpus.size() == 0) return s;
  s.lat_min = s.lat_max = corpus[0].lat;
  s.lon_min = s.lon_max = corpus[0].lon;
  for (const auto& it : corpus.items()) {
    s.lat_min = std::min(s.lat_min, it.lat);
    s.lat_max = std::max(s.lat_max, it.lat);
    s.lon_min = std::min(s.lon_min, it.lon);
    s.lon_max = std::max(s.lon_max, it.lon);
  }
  return s;
}

Vector composite_feature(const Item& item, const FeatureWeights& w, const FeatureScaling& s) {
  Vector f(kCompositeDim);
  f << w.admin * scaled(item.province_id, s.cards.provinces),
      w.admin * scaled(item.city_id, s.cards.cities), w.admin * scaled(item.town_id, s.cards.towns),
      w.geo * minmax(item.lat, s.lat_min, s.lat_max), w.geo * minmax(item.lon, s.lon_min, s.lon_max),
      w.cat * scaled(item.cat1_id, s.cards.cat1), w.cat * scaled(item.cat2_id, s.cards.cat2),
      w.brand * scaled(item.brand_id, s.cards.brands);
  return f;
}

Matrix composite_features(const Corpus& corpus, const FeatureWeights& w) {
  if (w.admin < 0 || w.geo < 0 || w.cat < 0 || w.brand < 0)
    throw ValidationError("weights", "feature weights must be >= 0");
  const auto s = FeatureScaling::from_corpus(corpus);
  Matrix out(static_cast<Eigen::Index>(corpus.size()), kCompositeDim);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = composite_feature(corpus[i], w, s).transpose();
  return out;
}

KMeansResult fit_layer1(const Matrix& features, int k, int batch, int iters, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (k < 1) throw ValidationError("k", "must be >= 1");
  if (static_cast<std::size_t>(k) > n) throw ValidationError("k", "exceeds the number of items");
  if (batch < 1 || iters < 0) throw ValidationError("batch", "batch must be >= 1, iters >= 0");
  Rng rng(seed);
  const Eigen::Index d = features.cols();

  // k-means++ seeding
  Matrix centers(k, d);
  std::vector<double> closest(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (int c = 0; c < k; ++c) {
    std::size_t pick = first;
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += closest[i];
      if (total > 0.0) {
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (closest[i] <= 0.0) continue;
          pick = i;
          r -= closest[i];
          if (r <= 0.0) break;
        }
      } else {
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < n; ++i)
          if (!chosen[i]) free.push_back(i);
        pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
      }
    }
    chosen[pick] = 1;
    centers.row(c) = features.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      const double dd = kernels::detail::squared_distance(
          features.row(static_cast<Eigen::Index>(i)).data(), centers.row(c).data(), d);
      closest[i] = std::min(closest[i], dd);
    }
  }

  // mini-batch updates with per-center learning rates 1/count
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(batch), n);
  std::uniform_int_distribution<std::size_t> draw(0, n - 1);
  std::vector<std::size_t> rows(b);
  std::vector<int> z;
  std::vector<double> d2;
  for (int it = 0; it < iters; ++it) {
    for (auto& r : rows) r = draw(rng);
    const Matrix mb = gather_rows(features, rows);
    nearest(mb, centers, z, d2);
    for (std::size_t i = 0; i < b; ++i) {
      const int c = z[i];
      counts[static_cast<std::size_t>(c)] += 1.0;
      const double eta = 1.0 / counts[static_cast<std::size_t>(c)];
      centers.row(c) = (1.0 - eta) * centers.row(c) + eta * mb.row(static_cast<Eigen::Index>(i));
    }
  }

  // full reassignment; empty clusters take the farthest point of a shared cluster
  const auto assign_all = [&] {
    for (int guard = 0;; ++guard) {
      nearest(features, centers, z, d2);
      std::vector<std::size_t> size(static_cast<std::size_t>(k), 0);
      for (int c : z) ++size[static_cast<std::size_t>(c)];
      const auto empty = std::find(size.begin(), size.end(), std::size_t{0});
      if (empty == size.end()) return;
      if (guard > 4 * k) throw Error("k-means could not fill every cluster");
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (size[static_cast<std::size_t>(z[i])] < 2) continue;
        if (far == n || d2[i] > d2[far]) far = i;
      }
      if (far == n || d2[far] <= 0.0)
        throw ValidationError("k", "fewer distinct feature vectors than clusters");
      centers.row(static_cast<Eigen::Index>(empty - size.begin())) =
          features.row(static_cast<Eigen::Index>(far));
    }
  };
  assign_all();
  // Lloyd passes until the assignment is a fixed point, so every returned
  // assignment is the nearest returned center
  for (int round = 0; round < kLloydRounds; ++round) {
    centers.setZero();
    std::vector<double> size(static_cast<std::size_t>(k), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      centers.row(z[i]) += features.row(static_cast<Eigen::Index>(i));
      size[static_cast<std::size_t>(z[i])] += 1.0;
    }
    for (int c = 0; c < k; ++c) centers.row(c) /= size[static_cast<std::size_t>(c)];
    const std::vector<int> previous = z;
    assign_all();
    if (z == previous) break;
  }
  KMeansResult res;
  res.assignments = z;
  res.centers = centers;
  for (std::size_t i = 0; i < n; ++i)
    res.inertia += (features.row(static_cast<Eigen::Index>(i)) - res.centers.row(z[i])).squaredNorm();
  return res;
}

Matrix lift_layer1_centers(std::span<const int> assignments, int k, const Matrix& embeddings) {
  if (assignments.size() != static_cast<std::size_t>(embeddings.rows()))
    throw ValidationError("assignments", "one token per embedding row required");
  Matrix mu = Matrix::Zero(k, embeddings.cols());
  std::vector<double> count(static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const int z = assignments[i];
    if (z < 0 || z >= k) throw ValidationError("assignments", "token out of range");
    mu.row(z) += embeddings.row(static_cast<Eigen::Index>(i));
    count[static_cast<std::size_t>(z)] += 1.0;
  }
  for (int c = 0; c < k; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0.0)
      throw ValidationError("assignments", "token " + std::to_string(c) + " has no items");
    mu.row(c) /= count[static_cast<std::size_t>(c)];
  }
  return mu;
}

QuantizeResult assign_and_quantize(const Matrix& residual, const Codebook& codebook) {
  if (residual.cols() != codebook.centers.cols())
    throw ValidationError("residual", "dimension does not match the codebook");
  QuantizeResult q;
  nearest(residual, codebook.centers, q.z, q.dist2);
  q.quantized.resize(residual.rows(), residual.cols());
  for (Eigen::Index i = 0; i < residual.rows(); ++i)
    q.quantized.row(i) = codebook.centers.row(q.z[static_cast<std::size_t>(i)]);
  q.residual = residual - q.quantized;
  return q;
}

Vector usage_distribution(std::span<const int> z, int k) {
  if (z.empty()) throw ValidationError("assignments", "empty");
  Vector p = Vector::Zero(k);
  for (int t : z) {
    if (t < 0 || t >= k) throw ValidationError("assignments", "token out of range");
    p[t] += 1.0;
  }
  return p / static_cast<double>(z.size());
}

double kl_usage_reg(const Vector& p) {
  const double k = static_cast<double>(p.size());
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] * k);
  }
  return std::max(kl, 0.0);
}

double usage_entropy(const Vector& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

double soft_usage_kl(const Matrix& residual, const Codebook& codebook, Matrix* grad_centers,
                     Matrix* grad_residual) {
  const Eigen::Index n = residual.rows();
  const Eigen::Index k = codebook.centers.rows();
  const Eigen::Index d = residual.cols();
  if (n == 0) throw ValidationError("residual", "empty batch");
  if (codebook.tau <= 0) throw ValidationError("tau", "must be > 0");
  const double tau = codebook.tau;

  Matrix q(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    double lo = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < k; ++c) {
      q(i, c) = kernels::detail::squared_distance(residual.row(i).data(),
                                                  codebook.centers.row(c).data(), d);
      lo = std::min(lo, q(i, c));
    }
    double z = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      q(i, c) = std::exp(-(q(i, c) - lo) / tau);
      z += q(i, c);
    }
    q.row(i) /= z;
  }
  const Vector pbar = q.colwise().sum().transpose() / static_cast<double>(n);
  double kl = 0.0;
  Vector g(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const double lp = std::log(std::max(pbar[c], 1e-300) * static_cast<double>(k));
    kl += pbar[c] * lp;
    g[c] = lp + 1.0;
  }
  if (!grad_centers && !grad_residual) return kl;

  // dKL/da_ic with a_ic = -||R_i - mu_c||^2 / tau
  Matrix s(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean_g = q.row(i).dot(g.transpose());
    for (Eigen::Index c = 0; c < k; ++c)
      s(i, c) = q(i, c) * (g[c] - mean_g) / static_cast<double>(n);
  }
  if (grad_centers) grad_centers->setZero(k, d);
  if (grad_residual) grad_residual->setZero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < k; ++c) {
      const double w = 2.0 / tau * s(i, c);
      if (w == 0.0) continue;
      const RowVector diff = residual.row(i) - codebook.centers.row(c);
      if (grad_centers) grad_centers->row(c) += w * diff;
      if (grad_residual) grad_residual->row(i) -= w * diff;
    }
  }
  return kl;
}

void HgitConfig::validate() const {
  if (levels < 2) throw ValidationError("hgit.levels", "must be >= 2");
  if (codebook_sizes.size() != static_cast<std::size_t>(levels))
    throw ValidationError("hgit.codebook_sizes", "one size per level required");
  for (int k : codebook_sizes) {
    if (k < 2) throw ValidationError("hgit.codebook_sizes", "every codebook needs >= 2 centers");
  }
  if (lambda_reg < 0) throw ValidationError("hgit.lambda_reg", "must be >= 0");
  if (tau <= 0) throw ValidationError("hgit.tau", "must be > 0");
  if (epochs < 0) throw ValidationError("hgit.epochs", "must be >= 0");
  if (batch < 2) throw ValidationError("hgit.batch", "must be >= 2");
  if (weights.admin < 0 || weights.geo < 0 || weights.cat < 0 || weights.brand < 0)
    throw ValidationError("hgit.weights", "feature weights must be >= 0");
}

void HgitReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t levels = epochs.empty() ? 0 : epochs.front().kl.size();
  out << "epoch,recon";
  for (std::size_t l = 0; l < levels; ++l) out << ",kl_l" << l + 2 << ",entropy_l" << l + 2;
  out << ",reseeded\n";
  out.precision(10);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.recon;
    for (std::size_t l = 0; l < e.kl.size(); ++l) out << ',' << e.kl[l] << ',' << e.entropy[l];
    out << ',' << e.reseeded << '\n';
  }
}

double hgit_objective(const Matrix& level1_residual, std::span<Codebook> books, double lambda_reg,
                      bool accumulate) {
  const Eigen::Index n = level1_residual.rows();
  if (n == 0) throw ValidationError("residual", "empty batch");
  std::vector<std::vector<int>> tokens(books.size());
  std::vector<Matrix> inputs(books.size());
  Matrix r = level1_residual;
  double reg = 0.0;
  std::vector<Matrix> grad_inputs(books.size());
  for (std::size_t l = 0; l < books.size(); ++l) {
    Codebook& book = books[l];
    inputs[l] = r;
    Matrix gc;
    const double kl = soft_usage_kl(r, book, accumulate ? &gc : nullptr,
                                    accumulate ? &grad_inputs[l] : nullptr);
    reg += kl;
    if (accumulate) {
      if (book.grad.rows() != book.centers.rows() || book.grad.cols() != book.centers.cols())
        book.grad = Matrix::Zero(book.centers.rows(), book.centers.cols());
      book.grad += lambda_reg * gc;
    }
    auto q = assign_and_quantize(r, book);
    tokens[l] = std::move(q.z);
    r = std::move(q.residual);
  }
  const double recon = r.rowwise().squaredNorm().sum() / static_cast<double>(n);
  if (!accumulate) return recon + lambda_reg * reg;

  // R_L = R_1 - sum_l mu_l[z_l]; the KL input at level l is R_1 - sum_{m<l} mu_m[z_m].
  const double scale = 2.0 / static_cast<double>(n);
  for (std::size_t l = 0; l < books.size(); ++l) {
    for (Eigen::Index i = 0; i < n; ++i)
      books[l].grad.row(tokens[l][static_cast<std::size_t>(i)]) -= scale * r.row(i);
  }
  for (std::size_t l = 1; l < books.size(); ++l) {
    for (std::size_t m = 0; m < l; ++m) {
      for (Eigen::Index i = 0; i < n; ++i)
        books[m].grad.row(tokens[m][static_cast<std::size_t>(i)]) -=
            lambda_reg * grad_inputs[l].row(i);
    }
  }
  return recon + lambda_reg * reg;
}

HierarchicalTokenizer::HierarchicalTokenizer(Matrix level1_centers, std::vector<Codebook> books)
    : level1_(std::move(level1_centers)), books_(std::move(books)) {
  if (level1_.rows() < 1) throw ValidationError("level1", "no centers");
  for (std::size_t l = 0; l < books_.size(); ++l) {
    if (books_[l].centers.cols() != level1_.cols())
      throw ValidationError("codebook", "dimension mismatch at level " + std::to_string(l + 2));
    if (books_[l].size() < 2) throw ValidationError("codebook", "fewer than 2 centers");
    if (!books_[l].centers.allFinite()) throw ValidationError("codebook", "non-finite center");
    books_[l].level = static_cast<int>(l) + 2;
    books_[l].learnable = true;
  }
}

std::vector<int> HierarchicalTokenizer::codebook_sizes() const {
  std::vector<int> out{static_cast<int>(level1_.rows())};
  for (const auto& b : books_) out.push_back(b.size());
  return out;
}

namespace {

Matrix level1_residual(const Matrix& x, std::span<const int> level1, const Matrix& mu) {
  if (level1.size() != static_cast<std::size_t>(x.rows()))
    throw ValidationError("level1", "one level-1 token per embedding row required");
  if (x.cols() != mu.cols()) throw ValidationError("embeddings", "dimension mismatch");
  Matrix r = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int z = level1[static_cast<std::size_t>(i)];
    if (z < 0 || z >= mu.rows()) throw ValidationError("level1", "token out of range");
    r.row(i) -= mu.row(z);
  }
  return r;
}

}  // namespace

std::vector<Matrix> HierarchicalTokenizer::quantize_levels(
    const Matrix& x, std::span<const int> level1, Matrix* final_residual,
    std::vector<std::vector<int>>* tokens) const {
  if (!trained()) throw Error("tokenizer has no trained codebooks");
  std::vector<Matrix> qs;
  Matrix r = level1_residual(x, level1, level1_);
  qs.push_back(x - r);
  if (tokens) {
    tokens->clear();
    tokens->emplace_back(level1.begin(), level1.end());
  }
  for (const auto& book : books_) {
    auto q = assign_and_quantize(r, book);
    qs.push_back(std::move(q.quantized));
    r = std::move(q.residual);
    if (tokens) tokens->push_back(std::move(q.z));
  }
  if (final_residual) *final_residual = std::move(r);
  return qs;
}

double HierarchicalTokenizer::recon_loss(const Matrix& x, std::span<const int> level1) const {
  Matrix r;
  quantize_levels(x, level1, &r);
  return r.rowwise().squaredNorm().sum() / static_cast<double>(std::max<Eigen::Index>(1, x.rows()));
}

SemanticID HierarchicalTokenizer::tokenize(const RowVector& embedding, int level1_token) const {
  Matrix x = embedding;
  const int z = level1_token;
  return tokenize_all(x, std::span<const int>(&z, 1)).front();
}

std::vector<SemanticID> HierarchicalTokenizer::tokenize_all(const Matrix& x,
                                                            std::span<const int> level1) const {
  std::vector<std::vector<int>> tokens;
  quantize_levels(x, level1, nullptr, &tokens);
  std::vector<SemanticID> out(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].tokens.reserve(tokens.size());
    for (const auto& level : tokens) out[i].tokens.push_back(level[i]);
  }
  return out;
}

HierarchicalTokenizer HierarchicalTokenizer::train(const Matrix& x, std::span<const int> level1,
                                                   const Matrix& level1_centers,
                                                   const HgitConfig& cfg, HgitReport* report) {
  cfg.validate();
  if (cfg.codebook_sizes.front() != level1_centers.rows())
    throw ValidationError("hgit.codebook_sizes", "level-1 size differs from the lifted centers");
  HierarchicalTokenizer tok;
  tok.level1_ = level1_centers;
  tok.fit_books(x, level1, 0, cfg, report);
  return tok;
}

void HierarchicalTokenizer::append_level(const Matrix& x, std::span<const int> level1, int size,
                                         const HgitConfig& cfg, HgitReport* report) {
  if (!trained()) throw Error("tokenizer has no trained codebooks");
  HgitConfig c = cfg;
  c.levels = levels() + 1;
  c.codebook_sizes = codebook_sizes();
  c.codebook_sizes.push_back(size);
  c.validate();
  fit_books(x, level1, books_.size(), c, report);
}

void HierarchicalTokenizer::fit_books(const Matrix& x, std::span<const int> level1,
                                      std::size_t first_trainable, const HgitConfig& cfg,
                                      HgitReport* report) {
  const Matrix r1 = level1_residual(x, level1, level1_);
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw ValidationError("embeddings", "need at least 2 items");
  Rng rng(derive_seed(cfg.seed, "hgit.codebooks." + std::to_string(first_trainable)));

  // initialize new levels from residual rows of random items
  {
    Matrix r = r1;
    for (std::size_t l = 0; l < static_cast<std::size_t>(cfg.levels - 1); ++l) {
      if (l >= books_.size()) {
        const int k = cfg.codebook_sizes[l + 1];
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        Codebook book;
        book.level = static_cast<int>(l) + 2;
        book.learnable = true;
        book.tau = cfg.tau;
        book.centers.resize(k, x.cols());
        for (int c = 0; c < k; ++c) {
          const std::size_t j = std::uniform_int_distribution<std::size_t>(
              static_cast<std::size_t>(c), n - 1)(rng);
          std::swap(pool[static_cast<std::size_t>(c)], pool[j]);
          book.centers.row(c) = r.row(static_cast<Eigen::Index>(pool[static_cast<std::size_t>(c)]));
        }
        book.grad = Matrix::Zero(k, x.cols());
        books_.push_back(std::move(book));
      }
      r = assign_and_quantize(r, books_[l]).residual;
    }
  }

  AdamW opt(cfg.optimizer);
  std::vector<ParamRef> params;
  for (std::size_t l = first_trainable; l < books_.size(); ++l) {
    books_[l].grad = Matrix::Zero(books_[l].centers.rows(), books_[l].centers.cols());
    params.push_back({books_[l].centers.data(), books_[l].grad.data(),
                      static_cast<std::size_t>(books_[l].centers.size())});
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), n);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + 1 < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const Matrix mb = gather_rows(r1, std::span(order).subspan(start, stop - start));
      const double loss = hgit_objective(mb, books_, cfg.lambda_reg, true);
      if (!std::isfinite(loss)) throw DivergenceError("tokenizer loss became non-finite");
      for (std::size_t l = 0; l < first_trainable; ++l) books_[l].grad.setZero();
      opt.step(params);
    }
    for (std::size_t l = first_trainable; l < books_.size(); ++l)
      check_finite(books_[l].centers, "codebook");

    // hard usage over the full set; dead centers move to high-residual items
    HgitEpoch row;
    row.epoch = epoch;
    Matrix r = r1;
    for (std::size_t l = 0; l < books_.size(); ++l) {
      auto q = assign_and_quantize(r, books_[l]);
      Vector p = usage_distribution(q.z, books_[l].size());
      if (l >= first_trainable) {
        std::vector<std::size_t> by_error(n);
        std::iota(by_error.begin(), by_error.end(), std::size_t{0});
        std::stable_sort(by_error.begin(), by_error.end(), [&](std::size_t a, std::size_t b) {
          return q.dist2[a] > q.dist2[b];
        });
        std::size_t next = 0;
        bool changed = false;
        for (int c = 0; c < books_[l].size(); ++c) {
          if (p[c] > 0.0 || next >= n) continue;
          books_[l].centers.row(c) = r.row(static_cast<Eigen::Index>(by_error[next++]));
          ++row.reseeded;
          changed = true;
        }
        if (changed) {
          q = assign_and_quantize(r, books_[l]);
          p = usage_distribution(q.z, books_[l].size());
        }
      }
      row.kl.push_back(kl_usage_reg(p));
      row.entropy.push_back(usage_entropy(p));
      r = std::move(q.residual);
    }
    row.recon = r.rowwise().squaredNorm().sum() / static_cast<double>(n);
    if (!std::isfinite(row.recon)) throw DivergenceError("reconstruction loss became non-finite");
    if (report) report->epochs.push_back(std::move(row));
  }
}

void HierarchicalTokenizer::save(const std::filesystem::path& path,
                                 const nlohmann::json& extra_header) const {
  if (!trained()) throw Error("tokenizer has no trained codebooks");
  nlohmann::ordered_json header;
  header["levels"] = levels();
  header["codebook_sizes"] = codebook_sizes();
  header["dim"] = dim();
  header["tau"] = books_.empty() ? 0.0 : books_.front().tau;
  if (!extra_header.is_null()) {
    for (const auto& [key, value] : extra_header.items()) header[key] = value;
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kCodebookMagic, sizeof kCodebookMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto write_matrix = [&](const Matrix& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  };
  write_matrix(level1_);
  for (const auto& b : books_) write_matrix(b.centers);
  if (!out) throw Error("failed writing " + path.string());
}

HierarchicalTokenizer HierarchicalTokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  char magic[sizeof kCodebookMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCodebookMagic, sizeof magic) != 0)
    throw ParseError(0, "magic", "not a codebook file: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 24)) throw ParseError(0, "header", "bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, "header", e.what());
  }
  const auto sizes = header.at("codebook_sizes").get<std::vector<int>>();
  const int dim = header.at("dim").get<int>();
  const double tau = header.at("tau").get<double>();
  if (sizes.empty() || dim < 1) throw ParseError(0, "header", "invalid codebook shape");
  const auto read_matrix = [&](int rows) {
    Matrix m(rows, dim);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw ParseError(0, "centers", "truncated codebook file");
    return m;
  };
  Matrix l1 = read_matrix(sizes[0]);
  std::vector<Codebook> books;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    Codebook b;
    b.centers = read_matrix(sizes[l]);
    b.tau = tau;
    books.push_back(std::move(b));
  }
  return HierarchicalTokenizer(std::move(l1), std::move(books));
}

void save_sids(std::span<const ItemId> ids, std::span<const SemanticID> sids,
               const std::filesystem::path& path) {
  if (ids.size() != sids.size()) throw ValidationError("sids", "one SID per item required");
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    nlohmann::ordered_json row;
    row["item_id"] = ids[i];
    row["sid"] = sids[i].tokens;
    out << row.dump() << '\n';
  }
}

std::vector<std::pair<ItemId, SemanticID>> load_sids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::pair<ItemId, SemanticID>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SemanticID s;
      s.tokens = j.at("sid").get<std::vector<int>>();
      out.emplace_back(j.at("item_id").get<ItemId>(), std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, "sid", e.what());
    }
  }
  return out;
}

}  // namespace lgsid
