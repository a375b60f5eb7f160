#include "helpers.hpp"

#include "pope/errors.hpp"
#include "pope/serialize.hpp"

#include <gtest/gtest.h>

#include <regex>

using namespace pope;
using pope::testing::random_test_env;

TEST(Serialize, SpecRoundTripIsExact) {
  auto e = random_test_env(2, 3, 2, 2, 3000);
  e.spec.pre_emission = e.spec.emission.rowwise().reverse();
  auto back = spec_from_json(Json::parse(dump_json(spec_to_json(e.spec))));
  EXPECT_EQ(back.emission, e.spec.emission);
  EXPECT_EQ(*back.pre_emission, *e.spec.pre_emission);
  for (int a = 0; a < 2; ++a) {
    EXPECT_EQ(back.transition[a], e.spec.transition[a]);
    EXPECT_EQ(back.reward_model[a], e.spec.reward_model[a]);
  }
  EXPECT_EQ(back.initial, e.spec.initial);
  EXPECT_EQ(spec_digest(back), spec_digest(e.spec));
}

TEST(Serialize, DoublesCarrySeventeenDigits) {
  std::string text = dump_json(matrix_to_json(Matrix::Constant(1, 1, 1.0 / 3.0)));
  EXPECT_NE(text.find("0.33333333333333331"), std::string::npos) << text;
}

TEST(Serialize, DigestChangesWithSpec) {
  auto e = random_test_env(2, 2, 2, 1, 3001);
  std::string d = spec_digest(e.spec);
  EXPECT_EQ(d.size(), 64u);
  e.spec.initial << 0.5, 0.5;
  EXPECT_NE(spec_digest(e.spec), d);
}

TEST(Serialize, KnownDigestOfEmptyString) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Serialize, UnknownKeyRejected) {
  auto e = random_test_env(2, 2, 2, 1, 3002);
  Json j = spec_to_json(e.spec);
  j["discount"] = 0.9;
  EXPECT_THROW(spec_from_json(j), ValidationError);
}

TEST(Serialize, ShapeMismatchRejected) {
  Json j = matrix_to_json(Matrix::Identity(2, 2));
  j["data"].erase(j["data"].begin());
  EXPECT_THROW(matrix_from_json(j, "m"), ValidationError);
}

TEST(Serialize, InvalidSpecRejectedOnLoad) {
  auto e = random_test_env(2, 2, 2, 1, 3003);
  e.spec.emission(0, 0) += 0.1;
  EXPECT_THROW(spec_from_json(spec_to_json(e.spec)), ValidationError);
}

TEST(Serialize, PoliciesRoundTrip) {
  auto e = random_test_env(2, 2, 2, 2, 3004);
  auto b = behavior_from_json(Json::parse(dump_json(behavior_to_json(e.behavior))));
  for (int t = 0; t <= 2; ++t) EXPECT_EQ(b.at(t), e.behavior.at(t));
  auto ev = evaluation_from_json(Json::parse(dump_json(evaluation_to_json(e.eval))));
  EXPECT_TRUE(ev.is_reactive());
  for (int t = 0; t <= 2; ++t) EXPECT_EQ(ev.table(t), e.eval.table(t));
  std::vector<Matrix> full;
  for (int t = 0; t <= 2; ++t) full.push_back(e.eval.table(t));
  auto fh = EvaluationPolicy::full_history(full, 2, 2);
  auto fb = evaluation_from_json(evaluation_to_json(fh));
  EXPECT_FALSE(fb.is_reactive());
  EXPECT_EQ(fb.table(2), fh.table(2));
}

TEST(Serialize, BatchRoundTripKeepsProvenance) {
  auto e = random_test_env(2, 2, 2, 2, 3005);
  auto batch = sample_batch(e.spec, e.behavior, 50, 17);
  EXPECT_EQ(batch.provenance.spec_digest, spec_digest(e.spec));
  auto back = batch_from_json(Json::parse(dump_json(batch_to_json(batch))));
  EXPECT_EQ(back.raw(), batch.raw());
  EXPECT_EQ(back.provenance.seed, 17u);
  EXPECT_EQ(back.provenance.spec_digest, batch.provenance.spec_digest);

  auto exact = enumerate_behavior(e.spec, e.behavior);
  auto eb = batch_from_json(batch_to_json(exact));
  ASSERT_TRUE(eb.weighted());
  for (std::size_t k = 0; k < exact.size(); ++k) EXPECT_EQ(eb.weight(k), exact.weight(k));
  EXPECT_EQ(eb.provenance.kind, BatchProvenance::Kind::exact);
}

TEST(Serialize, SameBatchSerializesToSameBytes) {
  auto e = random_test_env(2, 2, 2, 2, 3006);
  EXPECT_EQ(dump_json(batch_to_json(sample_batch(e.spec, e.behavior, 30, 4))),
            dump_json(batch_to_json(sample_batch(e.spec, e.behavior, 30, 4))));
}

TEST(Serialize, LatentsRoundTrip) {
  IdentifiedLatents id;
  id.horizon = 0;
  id.n_latent = 2;
  LatentStep s;
  s.policy = Matrix::Constant(2, 2, 0.5);
  s.reward = (Matrix(2, 2) << 0.1, 0.8, 0.9, 0.2).finished();
  s.token = {0, 1, 0, (Vector(2) << 0.7, 0.2).finished()};
  s.eigen_gap = 0.5;
  s.condition = 3.0;
  id.steps.push_back(s);
  auto back = latents_from_json(Json::parse(dump_json(latents_to_json(id))));
  EXPECT_EQ(back.steps[0].reward, s.reward);
  EXPECT_EQ(back.steps[0].token.eigenvalues, s.token.eigenvalues);
  EXPECT_EQ(back.steps[0].token.obs, 1);
}
