#include "lgsid/encoder.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace lgsid;
namespace t = lgsid::test;

namespace {

struct Fixture {
  Corpus corpus{generate_corpus(t::small_corpus_config()).items};
  FeaturizerConfig feat = FeaturizerConfig::for_corpus(corpus.cardinalities(), 32, 5);
  Rng rng{3};
  Encoder enc{feat, EncoderConfig{.hidden = 12, .dim = 8}, rng};
};

}  // namespace

TEST_CASE("self-override equals no override") {
  Fixture f;
  for (std::size_t i = 0; i < f.corpus.size(); i += 7)
    CHECK(featurize(f.feat, f.corpus[i], &f.corpus[i]) == featurize(f.feat, f.corpus[i]));
}

TEST_CASE("cross overrides keep content and swap location") {
  Fixture f;
  const Item& a = f.corpus[0];
  const Item& b = f.corpus[f.corpus.size() - 1];
  const PromptFeatures ab = featurize(f.feat, a, &b), ba = featurize(f.feat, b, &a);
  const PromptFeatures pa = featurize(f.feat, a), pb = featurize(f.feat, b);
  CHECK(ab.content == pa.content);
  CHECK(ba.content == pb.content);
  CHECK(ab.location == pb.location);
  CHECK(ba.location == pa.location);
}

TEST_CASE("content edits never touch the location half and vice versa") {
  Fixture f;
  Item a = f.corpus[5];
  const PromptFeatures before = featurize(f.feat, a);
  a.content_tokens = {1, 2, 3, 99};
  a.cat1_id = (a.cat1_id + 1) % f.corpus.cardinalities().cat1;
  const PromptFeatures content_changed = featurize(f.feat, a);
  CHECK(content_changed.location == before.location);
  Item b = f.corpus[5];
  b.town_id = f.corpus[200].town_id;
  b.city_id = f.corpus[200].city_id;
  b.province_id = f.corpus[200].province_id;
  CHECK(featurize(f.feat, b).content == before.content);
}

TEST_CASE("dense feature width equals the configured dimension") {
  Fixture f;
  std::vector<PromptFeatures> rows;
  for (const Item& it : f.corpus.items()) rows.push_back(f.enc.featurize(it));
  const Matrix x = f.enc.densify(rows);
  CHECK(x.cols() == f.feat.dim());
  CHECK(x.rows() == static_cast<Eigen::Index>(f.corpus.size()));
}

TEST_CASE("embeddings are unit norm and deterministic") {
  Fixture f;
  const Matrix e = f.enc.encode_items(f.corpus);
  for (Eigen::Index r = 0; r < e.rows(); ++r) CHECK(e.row(r).norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(f.enc.encode_items(f.corpus) == e);
  Rng rng(4);
  const Matrix x = t::random_matrix(20, f.feat.dim(), rng);
  const Matrix y = f.enc.forward(x);
  for (Eigen::Index r = 0; r < y.rows(); ++r) CHECK(y.row(r).norm() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("parameter gradient through the normalisation matches finite differences") {
  Fixture f;
  Rng rng(5);
  const Matrix x = t::random_matrix(4, f.feat.dim(), rng, 0.5);
  const Matrix g = t::random_matrix(4, f.enc.dim(), rng);
  const auto objective = [&] { return (f.enc.forward(x).array() * g.array()).sum(); };
  f.enc.net().zero_grad();
  Encoder::Pass pass;
  f.enc.forward(x, &pass);
  f.enc.backward(pass, g);
  double worst = 0.0;
  for (const ParamRef& p : f.enc.net().parameters()) {
    for (std::size_t i = 0; i < p.size; ++i) {
      const double fd = t::central_difference(objective, p.value[i]);
      worst = std::max(worst, t::rel_err(p.grad[i], fd));
    }
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("reference snapshot: identical at first, differs after a step, survives checkpointing") {
  Fixture f;
  const ReferenceEncoder ref = snapshot_reference(f.enc);
  CHECK(ref.encode_items(f.corpus) == f.enc.encode_items(f.corpus));
  const std::uint64_t hash = ref.parameter_hash();

  std::vector<PromptFeatures> rows;
  for (std::size_t i = 0; i < 16; ++i) rows.push_back(f.enc.featurize(f.corpus[i]));
  Encoder::Pass pass;
  const Matrix x = f.enc.densify(rows);
  f.enc.forward(x, &pass);
  Rng rng(6);
  f.enc.backward(pass, t::random_matrix(16, f.enc.dim(), rng));
  AdamW opt({.lr = 1e-2});
  opt.step(f.enc.net());
  CHECK(ref.encode_items(f.corpus) != f.enc.encode_items(f.corpus));
  CHECK(ref.parameter_hash() == hash);

  const auto dir = t::scratch_dir("encoder_rt");
  ref.encoder().save(dir / "r.net", dir / "r.json");
  const Encoder back = Encoder::load(dir / "r.net", dir / "r.json");
  CHECK(back.encode_items(f.corpus) == ref.encode_items(f.corpus));
  CHECK(back.featurizer().dim() == f.feat.dim());
}

TEST_CASE("warm-up keeps the unit-norm invariant and pulls same-category items together") {
  Fixture f;
  const auto mean_cos = [&](bool same) {
    const Matrix e = f.enc.encode_items(f.corpus);
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < f.corpus.size(); i += 3)
      for (std::size_t j = i + 1; j < f.corpus.size(); j += 5)
        if ((f.corpus[i].cat1_id == f.corpus[j].cat1_id) == same) {
          s += e.row(i).dot(e.row(j));
          ++n;
        }
    return s / n;
  };
  const double gap_before = mean_cos(true) - mean_cos(false);
  Rng rng(7);
  warmup_contrastive(f.enc, f.corpus, {.steps = 200, .batch = 32, .margin = 0.2, .lr = 1e-2}, rng);
  const Matrix e = f.enc.encode_items(f.corpus);
  for (Eigen::Index r = 0; r < e.rows(); ++r) CHECK(e.row(r).norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(mean_cos(true) - mean_cos(false) > gap_before);
}

TEST_CASE("featurizer config validation") {
  FeaturizerConfig c;
  c.content_buckets = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
