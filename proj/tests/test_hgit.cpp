#include "lgsid/eval.hpp"
#include "lgsid/hgit.hpp"
#include "support.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace lgsid;
namespace t = lgsid::test;

namespace {

// Level-1 tokens plus embeddings with a skewed within-token structure:
// most items sit near one of a few offsets, a minority are spread out.
struct Skewed {
  Matrix x;
  std::vector<int> level1;
  Matrix centers;
  int k1 = 4;
};

Skewed skewed_embeddings(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Skewed s;
  const Matrix base = t::random_matrix(s.k1, d, rng, 2.0);
  const Matrix offsets = t::random_matrix(6, d, rng, 0.1);
  std::discrete_distribution<int> skew({60, 20, 8, 6, 4, 2});
  std::normal_distribution<double> noise(0.0, 0.05);
  s.x.resize(n, d);
  for (int i = 0; i < n; ++i) {
    const int z = i % s.k1;
    s.level1.push_back(z);
    s.x.row(i) = base.row(z) + offsets.row(skew(rng));
    for (int c = 0; c < d; ++c) s.x(i, c) += noise(rng);
  }
  s.centers = lift_layer1_centers(s.level1, s.k1, s.x);
  return s;
}

HgitConfig small_config(double lambda_reg) {
  HgitConfig c;
  c.levels = 3;
  c.codebook_sizes = {4, 8, 8};
  c.lambda_reg = lambda_reg;
  c.epochs = 15;
  c.batch = 128;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("composite feature: zero weights, same-town items, field oracle") {
  const Corpus corpus(generate_corpus(t::small_corpus_config()).items);
  const auto s = FeatureScaling::from_corpus(corpus);
  CHECK(composite_feature(corpus[0], {0, 0, 0, 0}, s).isZero(0.0));

  Item a = corpus[0], b = corpus[1];
  b.cat1_id = a.cat1_id;
  b.cat2_id = a.cat2_id;
  b.brand_id = a.brand_id;
  const FeatureWeights w;
  const Vector fa = composite_feature(a, w, s), fb = composite_feature(b, w, s);
  CHECK(fa.head(3) == fb.head(3));
  CHECK(fa.tail(3) == fb.tail(3));
  CHECK(fa.segment(3, 2) != fb.segment(3, 2));

  const auto& c = corpus.cardinalities();
  Rng rng(1);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  for (int r = 0; r < 100; ++r) {
    const Item& it = corpus[pick(rng)];
    const Vector f = composite_feature(it, w, s);
    CHECK(f(0) == doctest::Approx(4.0 * it.province_id / c.provinces));
    CHECK(f(1) == doctest::Approx(4.0 * it.city_id / c.cities));
    CHECK(f(2) == doctest::Approx(4.0 * it.town_id / c.towns));
    CHECK(f(3) == doctest::Approx(2.0 * (it.lat - s.lat_min) / (s.lat_max - s.lat_min)));
    CHECK(f(4) == doctest::Approx(2.0 * (it.lon - s.lon_min) / (s.lon_max - s.lon_min)));
    CHECK(f(5) == doctest::Approx(1.0 * it.cat1_id / c.cat1));
    CHECK(f(6) == doctest::Approx(1.0 * it.cat2_id / c.cat2));
    CHECK(f(7) == doctest::Approx(0.5 * it.brand_id / c.brands));
  }
  CHECK_THROWS_AS(composite_features(corpus, {-1, 1, 1, 1}), ValidationError);
}

TEST_CASE("layer-1 k-means: saturation, two blobs, determinism, errors") {
  Rng rng(2);
  SUBCASE("k equal to n gives one token per item and zero inertia") {
    const Matrix f = t::random_matrix(12, 3, rng);
    const auto r = fit_layer1(f, 12, 4, 20, 5);
    CHECK(std::set<int>(r.assignments.begin(), r.assignments.end()).size() == 12);
    CHECK(r.inertia == doctest::Approx(0.0));
  }
  SUBCASE("two well-separated provinces, k = 2") {
    Matrix f(200, 2);
    std::vector<std::int64_t> province(200);
    std::normal_distribution<double> n(0.0, 0.1);
    for (int i = 0; i < 200; ++i) {
      province[i] = i < 120 ? 0 : 1;
      f(i, 0) = (province[i] ? 10.0 : 0.0) + n(rng);
      f(i, 1) = n(rng);
    }
    const auto r = fit_layer1(f, 2, 64, 30, 6);
    // brute-force 2-means oracle: the best split of a 2-blob instance is the blob split
    std::vector<std::int64_t> z(r.assignments.begin(), r.assignments.end());
    CHECK(nmi(z, province) == doctest::Approx(1.0));
    double oracle = 0.0;
    for (int b = 0; b < 2; ++b) {
      RowVector mean = RowVector::Zero(2);
      int cnt = 0;
      for (int i = 0; i < 200; ++i)
        if (province[i] == b) mean += f.row(i), ++cnt;
      mean /= cnt;
      for (int i = 0; i < 200; ++i)
        if (province[i] == b) oracle += (f.row(i) - mean).squaredNorm();
    }
    CHECK(r.inertia == doctest::Approx(oracle).epsilon(1e-9));
  }
  SUBCASE("fixed seed twice gives identical assignments") {
    const Matrix f = t::random_matrix(300, 4, rng);
    CHECK(fit_layer1(f, 7, 32, 25, 9).assignments == fit_layer1(f, 7, 32, 25, 9).assignments);
  }
  SUBCASE("every assignment is the nearest returned center") {
    const Matrix f = t::random_matrix(500, 6, rng);
    const auto r = fit_layer1(f, 16, 8, 10, 4);
    for (int i = 0; i < 500; ++i) {
      const double own = (f.row(i) - r.centers.row(r.assignments[i])).squaredNorm();
      for (int c = 0; c < 16; ++c) CHECK(own <= (f.row(i) - r.centers.row(c)).squaredNorm());
    }
  }
  SUBCASE("k larger than the corpus is an error") {
    CHECK_THROWS_AS(fit_layer1(t::random_matrix(5, 2, rng), 6, 4, 10, 1), ValidationError);
  }
}

TEST_CASE("lifting layer-1 centers into embedding space") {
  Rng rng(3);
  const Matrix x = t::random_matrix(50, 6, rng);
  const std::vector<int> one(50, 0);
  const Matrix mu = lift_layer1_centers(one, 1, x);
  CHECK(mu.row(0).isApprox(x.colwise().mean(), 1e-12));
  CHECK((x.rowwise() - mu.row(0)).colwise().sum().norm() <= 1e-10);

  Matrix same(4, 3);
  same << 1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6;
  const std::vector<int> z = {0, 0, 1, 1};
  const Matrix m2 = lift_layer1_centers(z, 2, same);
  CHECK(m2.row(0) == same.row(0));
  CHECK(m2.row(1) == same.row(2));

  std::vector<int> zr(50);
  for (int i = 0; i < 50; ++i) zr[i] = (i * 7) % 5;
  const Matrix m5 = lift_layer1_centers(zr, 5, x);
  for (int c = 0; c < 5; ++c) {
    RowVector sum = RowVector::Zero(6);
    int n = 0;
    for (int i = 0; i < 50; ++i)
      if (zr[i] == c) sum += x.row(i), ++n;
    CHECK((m5.row(c) - sum / n).norm() <= 1e-12);
  }
  const std::vector<int> gap = {0, 0, 2, 2};
  CHECK_THROWS_AS(lift_layer1_centers(gap, 3, same), ValidationError);
}

TEST_CASE("assign and quantize: exact match, argmin oracle, ties") {
  Rng rng(4);
  Codebook book;
  book.centers = t::random_matrix(6, 5, rng);
  Matrix r = t::random_matrix(200, 5, rng);
  r.row(0) = book.centers.row(3);
  const auto q = assign_and_quantize(r, book);
  CHECK(q.z[0] == 3);
  CHECK(q.residual.row(0).isZero(0.0));
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    int best = 0;
    for (int k = 1; k < 6; ++k)
      if ((r.row(i) - book.centers.row(k)).squaredNorm() < (r.row(i) - book.centers.row(best)).squaredNorm())
        best = k;
    CHECK(q.z[i] == best);
    CHECK((q.quantized.row(i) + q.residual.row(i) - r.row(i)).norm() <= 1e-12);
  }
  Codebook tie;
  tie.centers.resize(2, 1);
  tie.centers << -1.0, 1.0;
  Matrix zero = Matrix::Zero(1, 1);
  CHECK(assign_and_quantize(zero, tie).z[0] == 0);
}

TEST_CASE("usage distribution, KL to uniform and entropy") {
  const std::vector<int> one(5, 2);
  const Vector p1 = usage_distribution(one, 4);
  CHECK(p1 == (Vector(4) << 0, 0, 1, 0).finished());
  CHECK(kl_usage_reg(p1) == doctest::Approx(std::log(4.0)));
  const std::vector<int> split = {0, 0, 1, 0};
  CHECK(usage_distribution(split, 2) == (Vector(2) << 0.75, 0.25).finished());
  CHECK(kl_usage_reg(Vector::Constant(8, 1.0 / 8)) == doctest::Approx(0.0));

  Rng rng(5);
  std::uniform_int_distribution<int> pick(0, 9);
  std::vector<int> z(1000);
  for (int& v : z) v = pick(rng);
  const Vector p = usage_distribution(z, 10);
  double kl = 0.0, h = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double c = static_cast<double>(std::count(z.begin(), z.end(), k)) / 1000.0;
    CHECK(p(k) == c);
    if (c > 0) kl += c * std::log(c * 10), h -= c * std::log(c);
  }
  CHECK(kl_usage_reg(p) == doctest::Approx(kl).epsilon(1e-12));
  CHECK(usage_entropy(p) == doctest::Approx(h).epsilon(1e-12));
  CHECK(p.sum() == doctest::Approx(1.0));
}

TEST_CASE("soft usage KL: gradients w.r.t. centers and residuals match finite differences") {
  Rng rng(6);
  Codebook book;
  book.tau = 0.5;
  book.centers = t::random_matrix(4, 8, rng, 0.5);
  Matrix r = t::random_matrix(4, 8, rng, 0.5);
  Matrix gc, gr;
  soft_usage_kl(r, book, &gc, &gr);
  const auto f = [&] { return soft_usage_kl(r, book, nullptr, nullptr); };
  CHECK(t::max_fd_error<Matrix>(f, book.centers, gc) <= 1e-3);
  CHECK(t::max_fd_error<Matrix>(f, r, gr) <= 1e-3);
}

TEST_CASE("trainable objective gradient matches finite differences (d=8, batch 4)") {
  Rng rng(7);
  std::vector<Codebook> books(2);
  for (auto& b : books) {
    b.tau = 0.5;
    b.learnable = true;
    b.centers = t::random_matrix(3, 8, rng, 0.6);
  }
  const Matrix r1 = t::random_matrix(4, 8, rng);
  for (auto& b : books) b.grad = Matrix::Zero(3, 8);
  hgit_objective(r1, books, 0.1, true);
  const auto f = [&] { return hgit_objective(r1, books, 0.1, false); };
  for (auto& b : books) {
    const Matrix analytic = b.grad;
    CHECK(t::max_fd_error<Matrix>(f, b.centers, analytic) <= 1e-3);
  }
}

TEST_CASE("tokenizer invariants: telescoping, argmin optimality, distributions") {
  const Skewed s = skewed_embeddings(400, 8, 8);
  HgitReport report;
  const auto tok = HierarchicalTokenizer::train(s.x, s.level1, s.centers, small_config(0.1), &report);
  Matrix final_r;
  std::vector<std::vector<int>> tokens;
  const auto q = tok.quantize_levels(s.x, s.level1, &final_r, &tokens);
  REQUIRE(q.size() == 3);
  Matrix sum = final_r;
  for (const auto& m : q) sum += m;
  CHECK((sum - s.x).cwiseAbs().maxCoeff() <= 1e-9);

  Matrix r = s.x - q[0];
  for (std::size_t l = 0; l < tok.residual_books().size(); ++l) {
    const auto& book = tok.residual_books()[l];
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      const double chosen = (r.row(i) - book.centers.row(tokens[l + 1][i])).squaredNorm();
      for (int k = 0; k < book.size(); ++k) CHECK(chosen <= (r.row(i) - book.centers.row(k)).squaredNorm());
    }
    r -= q[l + 1];
  }
  for (const auto& e : report.epochs) {
    for (std::size_t l = 0; l < e.kl.size(); ++l) CHECK(e.kl[l] >= -1e-12);
    for (double h : e.entropy) CHECK(h <= std::log(8.0) + 1e-12);
  }
  CHECK(tok.recon_loss(s.x, s.level1) == doctest::Approx(final_r.rowwise().squaredNorm().mean()));
}

TEST_CASE("KL regularisation raises usage entropy at every level >= 2") {
  const Skewed s = skewed_embeddings(600, 8, 8);
  const auto entropy = [&](double lambda_reg) {
    const auto tok = HierarchicalTokenizer::train(s.x, s.level1, s.centers, small_config(lambda_reg));
    std::vector<std::vector<int>> tokens;
    tok.quantize_levels(s.x, s.level1, nullptr, &tokens);
    std::vector<double> h;
    for (std::size_t l = 1; l < tokens.size(); ++l) h.push_back(usage_entropy(usage_distribution(tokens[l], 8)));
    return h;
  };
  const auto off = entropy(0.0), on = entropy(0.1);
  for (std::size_t l = 0; l < off.size(); ++l) {
    CAPTURE(l);
    CHECK(on[l] > off[l]);
  }
}

TEST_CASE("capacity saturation drives reconstruction to zero") {
  // two distinct residuals per level-1 token, shared across tokens
  Matrix x(40, 3);
  std::vector<int> level1(40);
  for (int i = 0; i < 40; ++i) {
    level1[i] = i % 2;
    x.row(i) << (level1[i] ? 5.0 : -5.0), (i % 4 < 2 ? 1.0 : -1.0), 0.0;
  }
  const Matrix mu = lift_layer1_centers(level1, 2, x);
  HgitConfig c;
  c.levels = 2;
  c.codebook_sizes = {2, 4};
  c.lambda_reg = 0.0;
  c.epochs = 200;
  c.batch = 40;
  const auto tok = HierarchicalTokenizer::train(x, level1, mu, c);
  CHECK(tok.recon_loss(x, level1) <= 1e-6);
}

TEST_CASE("appending a trained level does not increase reconstruction loss") {
  const Skewed s = skewed_embeddings(400, 8, 10);
  HgitConfig c = small_config(0.1);
  c.levels = 2;
  c.codebook_sizes = {4, 8};
  auto tok = HierarchicalTokenizer::train(s.x, s.level1, s.centers, c);
  const double two = tok.recon_loss(s.x, s.level1);
  const auto books_before = tok.residual_books()[0].centers;
  tok.append_level(s.x, s.level1, 8, c);
  CHECK(tok.levels() == 3);
  CHECK(tok.residual_books()[0].centers == books_before);
  CHECK(tok.recon_loss(s.x, s.level1) <= two);
}

TEST_CASE("tokenize: constructed embedding, determinism, untrained error, collisions") {
  Matrix mu1(2, 3), mu2(3, 3);
  mu1 << 10, 0, 0, -10, 0, 0;
  mu2 << 0, 1, 0, 0, -1, 0, 0, 0, 1;
  Codebook b2{.level = 2, .centers = mu2, .learnable = true};
  Codebook b3{.level = 3, .centers = Matrix::Identity(3, 3) * 0.3, .learnable = true};
  const HierarchicalTokenizer tok(mu1, {b2, b3});
  const RowVector e = mu1.row(1) + mu2.row(2);
  const SemanticID sid = tok.tokenize(e, 1);
  CHECK(sid.tokens[0] == 1);
  CHECK(sid.tokens[1] == 2);
  Matrix final_r;
  const Matrix one = e;
  const std::vector<int> l1 = {1};
  tok.quantize_levels(one, l1, &final_r);
  CHECK(tok.tokenize(e, 1) == sid);
  // level-3 input is the zero residual, so it picks the center closest to 0
  CHECK((one - mu1.row(1) - mu2.row(2)).isZero(0.0));

  CHECK_THROWS(HierarchicalTokenizer().tokenize(e, 0));

  Rng rng(11);
  std::vector<SemanticID> sids;
  std::uniform_int_distribution<int> pick(0, 2);
  for (int i = 0; i < 300; ++i) sids.push_back({{pick(rng), pick(rng), pick(rng)}});
  std::map<SemanticID, int> seen;
  std::size_t dup = 0;
  for (const auto& s : sids)
    if (seen[s]++ > 0) ++dup;
  CHECK(token_stats(sids, std::vector<double>{50}).collisions == dup);
}

TEST_CASE("codebook and SID files round trip") {
  const Skewed s = skewed_embeddings(200, 8, 12);
  HgitConfig c = small_config(0.1);
  c.epochs = 2;
  const auto tok = HierarchicalTokenizer::train(s.x, s.level1, s.centers, c);
  const auto dir = t::scratch_dir("hgit_rt");
  tok.save(dir / "cb.bin");
  const auto back = HierarchicalTokenizer::load(dir / "cb.bin");
  CHECK(back.codebook_sizes() == tok.codebook_sizes());
  CHECK(back.tokenize_all(s.x, s.level1) == tok.tokenize_all(s.x, s.level1));
  CHECK(t::slurp(dir / "cb.bin").rfind("LGSIDCB1", 0) == 0);

  const auto sids = tok.tokenize_all(s.x, s.level1);
  std::vector<ItemId> ids(sids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<ItemId>(i * 3);
  save_sids(ids, sids, dir / "sids.jsonl");
  const auto loaded = load_sids(dir / "sids.jsonl");
  REQUIRE(loaded.size() == sids.size());
  for (std::size_t i = 0; i < sids.size(); ++i) {
    CHECK(loaded[i].first == ids[i]);
    CHECK(loaded[i].second == sids[i]);
  }
}

TEST_CASE("config validation") {
  HgitConfig c;
  c.lambda_reg = -0.1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.codebook_sizes = {64, 32};
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
