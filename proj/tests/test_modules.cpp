#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "mmnet/errors.hpp"
#include "mmnet/model.hpp"
#include "oracles.hpp"

using namespace mmnet;
using testing_util::random_image;
using testing_util::randomize;
using testing_util::tiny_config;
using testing_util::tokens;

namespace {

double max_diff(const Tensor<double>& a, const Tensor<double>& b) { return oracle::max_abs_diff(a.data, b.data); }

double l2(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return std::sqrt(s);
}

void check_rows_sum_to_one(const Tensor<double>& t) {
  const int cols = t.dim(-1);
  for (int64_t r = 0; r < t.numel() / cols; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += t.data[r * cols + c];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

}  // namespace

TEST_CASE("token validation") {
  CHECK(validate_tokens(tokens("red circle"), 8) == 3);
  CHECK_THROWS_AS(validate_tokens(std::vector<int>{1, 4, 5, 0}, 8), InputError);         // no EOS
  CHECK_THROWS_AS(validate_tokens(std::vector<int>{4, 2, 0}, 8), InputError);            // no SOS
  CHECK_THROWS_AS(validate_tokens(std::vector<int>{1, 2, 2}, 8), InputError);            // two EOS
  CHECK_THROWS_AS(validate_tokens(std::vector<int>(9, 0), 8), InputError);               // too long
  CHECK_THROWS_AS(Vocabulary::builtin().encode("red circle on the top left", 6), InputError);
}

TEST_CASE("text encoder ignores padding content") {
  ModelConfig cfg;
  Model<double> model(cfg, 3);
  randomize(model.params(), 4);
  std::vector<int> a = tokens("circle");  // [SOS, circle, EOS, PAD...]
  std::vector<int> b = a;
  b[4] = 5;
  b[6] = 9;
  std::swap(b[3], b[7]);
  Tape<double> tape;
  auto fa = model.text_encoder()(tape, a);
  auto fb = model.text_encoder()(tape, b);
  CHECK(fa.global.value().data == fb.global.value().data);
  const int c = cfg.width;
  for (int i = 0; i <= fa.eos_index; ++i) {
    for (int k = 0; k < c; ++k) CHECK(fa.tokens.value().data[i * c + k] == fb.tokens.value().data[i * c + k]);
  }
  CHECK(fa.token_mask == std::vector<uint8_t>{1, 1, 1, 0, 0, 0, 0, 0});

  auto fc = model.text_encoder()(tape, tokens("blue triangle"));
  auto fd = model.text_encoder()(tape, tokens("red triangle"));
  CHECK(l2(fc.global.value(), fd.global.value()) > 0.0);
}

TEST_CASE("image encoder stride arithmetic") {
  ModelConfig cfg;
  Model<double> model(cfg, 5);
  Tape<double> tape;
  auto v = model.image_encoder()(tape, tape.constant(random_image<double>(96, 1)));
  CHECK(v.v2.shape() == Shape{12, 12, cfg.v2_width});
  CHECK(v.v3.shape() == Shape{6, 6, cfg.v3_width});
  CHECK(v.v4.shape() == Shape{3, 3, cfg.v4_width});
  CHECK(v.global.shape() == Shape{cfg.v4_width});
  CHECK(v.pooled_spatial.shape()[0] == 9);

  cfg.image_size = 64;
  Model<double> small(cfg, 5);
  auto s = small.image_encoder()(tape, tape.constant(random_image<double>(64, 1)));
  CHECK(s.v2.shape() == Shape{8, 8, cfg.v2_width});
  CHECK(s.v4.shape() == Shape{2, 2, cfg.v4_width});

  CHECK_THROWS_AS(model.image_encoder()(tape, tape.constant(Tensor<double>({80, 96, 3}))), ShapeError);
  CHECK_THROWS_AS(model.image_encoder()(tape, tape.constant(Tensor<double>({96, 96, 1}))), ShapeError);
}

TEST_CASE("all-zero image gives a finite deterministic global feature") {
  ModelConfig cfg;
  Model<double> model(cfg, 6);
  auto run = [&] {
    Tape<double> tape;
    return model.image_encoder()(tape, tape.constant(Tensor<double>({96, 96, 3}, 0.0))).global.value();
  };
  auto g = run();
  CHECK(all_finite(g));
  CHECK(g.data == run().data);
}

TEST_CASE("attention pool with identity value path returns the mean token") {
  ModelConfig cfg;
  Model<double> model(cfg, 7);
  randomize(model.params(), 8);
  MultiHeadAttention<double>& pool = model.image_encoder().attention_pool();
  for (Linear<double>* l : {&pool.wq, &pool.wk, &pool.wv, &pool.wo}) {
    std::fill(l->bias->value.data.begin(), l->bias->value.data.end(), 0.0);
    auto& w = l->weight->value;
    std::fill(w.data.begin(), w.data.end(), 0.0);
    if (l == &pool.wv || l == &pool.wo) {
      for (int i = 0; i < w.dim(0); ++i) w.data[i * w.dim(1) + i] = 1.0;
    }
  }
  Tape<double> tape;
  auto v = model.image_encoder()(tape, tape.constant(random_image<double>(96, 2)));
  const auto& x4 = v.x4.value();
  const int c = x4.dim(2), n = x4.dim(0) * x4.dim(1);
  Tensor<double> mean({1, c}, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) mean.data[k] += x4.data[i * c + k] / n;
  }
  CHECK(max_diff(v.pooled_global.value(), mean) < 1e-12);
  // F_vg is the projection of that mean.
  Linear<double>& proj = model.image_encoder().global_projection();
  auto expected = proj(tape, tape.constant(mean)).value();
  CHECK(oracle::max_abs_diff(v.global.value().data, expected.data) < 1e-12);
}

TEST_CASE("fusion neck shapes, coordinates and the closed text gate") {
  ModelConfig cfg;
  Model<double> model(cfg, 9);
  Tape<double> tape;
  auto v = model.image_encoder()(tape, tape.constant(random_image<double>(96, 3)));
  auto tg = model.text_encoder()(tape, tokens("red circle")).global;
  auto fused = model.fusion_neck()(tape, v, tg);
  CHECK(fused.features.shape() == Shape{36, 64});
  CHECK(fused.grid_h == 6);

  auto zero = model.fusion_neck()(tape, v, tape.constant(Tensor<double>({cfg.text_global_width}, 0.0)));
  for (double x : zero.m4.value().data) CHECK(x == 0.0);

  Tensor<double> doubled = tg.value();
  for (double& x : doubled.data) x *= 2;
  auto open = model.fusion_neck()(tape, v, tape.constant(doubled));
  CHECK(open.features.shape() == fused.features.shape());
  CHECK(l2(open.features.value(), fused.features.value()) > 0.0);

  auto coords = coord_features<double>(6, 6);
  CHECK(coords.shape == Shape{6, 6, 2});
  CHECK(coords.data[0] == -1.0);  // x at the top-left
  CHECK(coords.data[1] == -1.0);  // y at the top-left
  CHECK(coords.data[(5 * 6 + 5) * 2] == 1.0);
  CHECK(coords.data[(5 * 6 + 5) * 2 + 1] == 1.0);
  CHECK(coords.data[(0 * 6 + 1) * 2] == doctest::Approx(-0.6));
  CHECK(fused.coords.value().data == coords.data);
}

TEST_CASE("query generator") {
  ModelConfig cfg;
  Model<double> model(cfg, 10);
  randomize(model.params(), 11);
  QueryGenerator<double>& qg = model.query_generator();
  Tape<double> tape;
  auto v = model.image_encoder()(tape, tape.constant(random_image<double>(96, 4)));
  auto text = model.text_encoder()(tape, tokens("small red circle"));

  SUBCASE("dense visual features are 8 x 36 and ignore the text") {
    auto dense = qg.dense_visual(tape, v);
    CHECK(dense.shape() == Shape{8, 36});
    auto q = qg(tape, text, v);
    auto text2 = model.text_encoder()(tape, tokens("blue square"));
    auto q2 = qg(tape, text2, v);
    CHECK(q.dense.value().data == q2.dense.value().data);
    CHECK(q.dense.value().data == dense.value().data);
  }
  SUBCASE("closed visual gate zeroes the fused text") {
    Param<double>* bias = model.params().find("query.w_vg.bias");
    REQUIRE(bias != nullptr);
    std::fill(bias->value.data.begin(), bias->value.data.end(), 0.0);
    auto ftv = qg.fuse_text_global(tape, text.tokens, tape.constant(Tensor<double>({cfg.v4_width}, 0.0)));
    for (double x : ftv.value().data) CHECK(x == 0.0);
  }
  SUBCASE("fused text matches the elementwise formula") {
    auto ftv = qg.fuse_text_global(tape, text.tokens, v.global).value();
    auto wt = model.params().find("query.w_t.weight")->value;
    auto bt = model.params().find("query.w_t.bias")->value;
    auto wvg = model.params().find("query.w_vg.weight")->value;
    auto bvg = model.params().find("query.w_vg.bias")->value;
    const auto& ft = text.tokens.value();
    const auto& fvg = v.global.value();
    const int L = ft.dim(0), C = ft.dim(1), C4 = fvg.dim(0);
    for (int i = 0; i < L; ++i) {
      for (int k = 0; k < C; ++k) {
        double a = bt.data[k], g = bvg.data[k];
        for (int j = 0; j < C; ++j) a += ft.data[i * C + j] * wt.data[j * C + k];
        for (int j = 0; j < C4; ++j) g += fvg.data[j] * wvg.data[j * C + k];
        CHECK(std::abs(ftv.data[i * C + k] - std::max(a, 0.0) * std::max(g, 0.0)) < 1e-10);
      }
    }
  }
  SUBCASE("attention rows are distributions over valid words") {
    auto q = qg(tape, text, v);
    const auto& a = q.attention.value();
    CHECK(a.shape == Shape{8, 8});
    check_rows_sum_to_one(a);
    for (int n = 0; n < 8; ++n) {
      for (int i = text.eos_index + 1; i < 8; ++i) CHECK(a.data[n * 8 + i] == 0.0);
    }
    CHECK(q.queries.shape() == Shape{8, 64});
  }
  SUBCASE("identical dense rows give identical queries") {
    Tensor<double> dense = qg.dense_visual(tape, v).value();
    for (int k = 0; k < 36; ++k) dense.data[36 + k] = dense.data[k];
    auto ftv = qg.fuse_text_global(tape, text.tokens, v.global);
    auto q = qg.generate(tape, tape.constant(dense), ftv, text.token_mask);
    const auto& a = q.attention.value();
    const auto& f = q.queries.value();
    for (int i = 0; i < 8; ++i) CHECK(a.data[i] == a.data[8 + i]);
    for (int k = 0; k < 64; ++k) CHECK(f.data[k] == f.data[64 + k]);
  }
  SUBCASE("a single valid word gives one-hot attention") {
    auto ftv = qg.fuse_text_global(tape, text.tokens, v.global);
    std::vector<uint8_t> one(8, 0);
    one[2] = 1;
    auto q = qg.generate(tape, qg.dense_visual(tape, v), ftv, one);
    const auto& a = q.attention.value();
    for (int n = 0; n < 8; ++n) {
      for (int i = 0; i < 8; ++i) CHECK(a.data[n * 8 + i] == (i == 2 ? 1.0 : 0.0));
    }
    const auto& f = q.queries.value();
    for (int n = 1; n < 8; ++n) {
      for (int k = 0; k < 64; ++k) CHECK(f.data[n * 64 + k] == f.data[k]);
    }
    std::vector<uint8_t> none(8, 0);
    CHECK_THROWS_AS(qg.generate(tape, qg.dense_visual(tape, v), ftv, none), InputError);
  }
}

TEST_CASE("query generator degenerates gracefully to one query") {
  ModelConfig cfg;
  cfg.num_queries = 1;
  Model<double> model(cfg, 12);
  Tape<double> tape;
  auto out = model.forward(tape, random_image<double>(96, 5), tokens("green square"));
  CHECK(out.queries.dense.shape() == Shape{1, 36});
  CHECK(out.queries.queries.shape() == Shape{1, 64});
  CHECK(out.masks.scores.value().data == std::vector<double>{1.0});
  cfg.num_queries = 0;
  CHECK_THROWS_AS(Model<double>(cfg, 1), ConfigError);
}

TEST_CASE("use_fvg=false skips the global visual feature") {
  ModelConfig cfg;
  cfg.use_fvg = false;
  Model<double> model(cfg, 13);
  CHECK(model.params().find("query.w_vg.weight") == nullptr);
  Tape<double> tape;
  auto text = model.text_encoder()(tape, tokens("red circle"));
  auto a = model.query_generator().fuse_text_global(tape, text.tokens, tape.constant(Tensor<double>({64}, 1.0)));
  auto b = model.query_generator().fuse_text_global(tape, text.tokens, tape.constant(Tensor<double>({64}, -3.0)));
  CHECK(a.value().data == b.value().data);
}

TEST_CASE("decoder is the identity at initialisation") {
  ModelConfig cfg;
  Model<double> model(cfg, 14);
  Tape<double> tape;
  std::mt19937_64 rng(1);
  auto visual = tape.constant(oracle::random_tensor(rng, {36, 64}));
  auto queries = tape.constant(oracle::random_tensor(rng, {8, 64}));
  auto st = model.decoder()(tape, visual, queries, 6, 6);
  CHECK(st.features.value().data == visual.value().data);
}

TEST_CASE("decoder attention rows, permutation invariance and gradient flow") {
  ModelConfig cfg;
  Model<double> model(cfg, 15);
  randomize(model.params(), 16);
  std::mt19937_64 rng(2);
  auto vis = oracle::random_tensor(rng, {36, 64});
  auto qs = oracle::random_tensor(rng, {8, 64});
  auto vpos = sine_encoding_2d<double>(6, 6, 64);
  auto qpos = sine_encoding_1d<double>(8, 64);

  Tape<double> tape;
  auto lv = tape.leaf(vis);
  auto lq = tape.leaf(qs);
  auto st = model.decoder().decode(tape, lv, lq, tape.constant(vpos), tape.constant(qpos));
  CHECK(st.features.shape() == Shape{36, 64});
  REQUIRE(!st.self_attention.empty());
  REQUIRE(!st.cross_attention.empty());
  for (auto& a : st.self_attention) check_rows_sum_to_one(a.value());
  for (auto& a : st.cross_attention) check_rows_sum_to_one(a.value());

  // Permute query rows together with their positional encodings.
  const std::vector<int> perm = {3, 0, 7, 1, 6, 2, 5, 4};
  Tensor<double> pq({8, 64}), pp({8, 64});
  for (int r = 0; r < 8; ++r) {
    for (int k = 0; k < 64; ++k) {
      pq.data[r * 64 + k] = qs.data[perm[r] * 64 + k];
      pp.data[r * 64 + k] = qpos.data[perm[r] * 64 + k];
    }
  }
  Tape<double> t2;
  auto st2 = model.decoder().decode(t2, t2.constant(vis), t2.constant(pq), t2.constant(vpos), t2.constant(pp));
  CHECK(max_diff(st.features.value(), st2.features.value()) < 1e-12);

  tape.backward(oracle::weighted_sum(st.features));
  double gv = 0.0, gq = 0.0;
  for (double g : tape.grad(lv)) gv += std::abs(g);
  for (double g : tape.grad(lq)) gq += std::abs(g);
  CHECK(gv > 0.0);
  CHECK(gq > 0.0);
}

TEST_CASE("decoder rejects a head count that does not divide the width") {
  ModelConfig cfg;
  cfg.decoder_heads = 5;
  CHECK_THROWS_AS(Model<double>(cfg, 1), ConfigError);
}

TEST_CASE("dynamic convolution matches the naive oracle") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int h = 6 + trial % 3, w = 8 - trial % 3, cp = 1 + trial % 4;
    auto feat = oracle::random_tensor(rng, {h, w, cp});
    auto params = oracle::random_tensor(rng, {3, 9 * cp + 1});
    Tape<double> tape;
    auto out = MaskDecoder<double>::dynamic_conv(tape.constant(feat), tape.constant(params)).value();
    auto ref = oracle::dynamic_conv(feat, params);
    REQUIRE(out.shape == Shape{3, h * w});
    for (int q = 0; q < 3; ++q) {
      std::vector<double> row(out.data.begin() + q * h * w, out.data.begin() + (q + 1) * h * w);
      CHECK(oracle::max_abs_diff(row, ref[q]) < 1e-6);
    }
  }
}

TEST_CASE("mask projection examples") {
  std::mt19937_64 rng(18);
  auto feat = oracle::random_tensor(rng, {6, 6, 4});
  Tensor<double> params({2, 37}, 0.0);
  params.data[36] = 0.75;  // zero kernel, bias 0.75
  for (int k = 0; k < 37; ++k) params.data[37 + k] = 0.1 * k;
  Tape<double> tape;
  auto out = MaskDecoder<double>::dynamic_conv(tape.constant(feat), tape.constant(params)).value();
  for (int p = 0; p < 36; ++p) CHECK(out.data[p] == 0.75);

  ModelConfig cfg;
  Model<double> model(cfg, 19);
  randomize(model.params(), 20);
  auto decoded = tape.constant(oracle::random_tensor(rng, {36, 64}));
  auto row = oracle::random_tensor(rng, {1, 64});
  Tensor<double> same({2, 64});
  std::copy(row.data.begin(), row.data.end(), same.data.begin());
  std::copy(row.data.begin(), row.data.end(), same.data.begin() + 64);
  auto [masks, shared] = model.mask_decoder().project_masks(tape, decoded, tape.constant(same), 6, 6);
  CHECK(shared.shape() == Shape{24, 24, 32});
  const auto& m = masks.value();
  for (int p = 0; p < 576; ++p) CHECK(m.data[p] == m.data[576 + p]);
  CHECK_THROWS_AS(model.mask_decoder().project_masks(tape, tape.constant(Tensor<double>({35, 64})), tape.constant(same), 6, 6),
                  ShapeError);
}

TEST_CASE("estimator scores") {
  ModelConfig cfg;
  Model<double> model(cfg, 21);
  randomize(model.params(), 22);
  std::mt19937_64 rng(23);
  Tape<double> tape;
  auto s1 = model.mask_decoder().estimate_scores(tape, tape.constant(oracle::random_tensor(rng, {1, 64}))).value();
  CHECK(s1.data == std::vector<double>{1.0});

  auto row = oracle::random_tensor(rng, {1, 64});
  Tensor<double> same({5, 64});
  for (int r = 0; r < 5; ++r) std::copy(row.data.begin(), row.data.end(), same.data.begin() + r * 64);
  auto su = model.mask_decoder().estimate_scores(tape, tape.constant(same)).value();
  for (double s : su.data) CHECK(s == doctest::Approx(0.2).epsilon(1e-12));

  auto sr = model.mask_decoder().estimate_scores(tape, tape.constant(oracle::random_tensor(rng, {8, 64}))).value();
  check_rows_sum_to_one(sr);
  for (double s : sr.data) CHECK(s > 0.0);
}

TEST_CASE("aggregation") {
  std::mt19937_64 rng(24);
  Tape<double> tape;
  auto masks = oracle::random_tensor(rng, {4, 20}, -5, 5);
  Tensor<double> onehot({1, 4}, std::vector<double>{0, 0, 1, 0});
  auto y = MaskDecoder<double>::aggregate(tape.constant(masks), tape.constant(onehot)).value();
  for (int p = 0; p < 20; ++p) CHECK(y.data[p] == masks.data[2 * 20 + p]);

  Tensor<double> same({3, 20});
  for (int r = 0; r < 3; ++r) std::copy(masks.data.begin(), masks.data.begin() + 20, same.data.begin() + r * 20);
  auto yu = MaskDecoder<double>::aggregate(tape.constant(same), tape.constant(Tensor<double>({1, 3}, 1.0 / 3))).value();
  for (int p = 0; p < 20; ++p) CHECK(yu.data[p] == doctest::Approx(masks.data[p]).epsilon(1e-14));

  CHECK_THROWS_AS(MaskDecoder<double>::aggregate(tape.constant(masks), tape.constant(Tensor<double>({1, 3}, 0.3))),
                  ShapeError);
}

TEST_CASE("full forward: bundle invariants and ablation wiring") {
  ModelConfig cfg;
  Model<double> model(cfg, 25);
  randomize(model.params(), 26);
  Tape<double> tape;
  auto img = random_image<double>(96, 6);
  auto toks = tokens("large yellow triangle");
  auto out = model.forward(tape, img, toks);
  const auto& masks = out.masks.masks.value();
  const auto& scores = out.masks.scores.value();
  const auto& y = out.masks.y.value();
  CHECK(masks.shape == Shape{8, 24, 24});
  CHECK(y.shape == Shape{24, 24});
  check_rows_sum_to_one(scores);
  for (int p = 0; p < 576; ++p) {
    double s = 0.0, lo = INFINITY, hi = -INFINITY;
    for (int n = 0; n < 8; ++n) {
      s += scores.data[n] * masks.data[n * 576 + p];
      lo = std::min(lo, masks.data[n * 576 + p]);
      hi = std::max(hi, masks.data[n * 576 + p]);
    }
    CHECK(std::abs(y.data[p] - s) < 1e-6);
    CHECK(y.data[p] >= lo - 1e-12);
    CHECK(y.data[p] <= hi + 1e-12);
  }

  SUBCASE("no_mqe averages the masks exactly") {
    ModelConfig c2 = cfg;
    c2.use_mqe = false;
    Model<double> m2(c2, 25);
    randomize(m2.params(), 26);
    Tape<double> t2;
    auto o2 = m2.forward(t2, img, toks);
    const auto& mk = o2.masks.masks.value();
    std::vector<double> mean(576, 0.0);
    for (int n = 0; n < 8; ++n) {
      for (int p = 0; p < 576; ++p) mean[p] += mk.data[n * 576 + p];
    }
    for (double& v : mean) v /= 8;
    CHECK(o2.masks.y.value().data == mean);
    for (double s : o2.masks.scores.value().data) CHECK(s == 0.125);
  }
  SUBCASE("no_mmp projects exactly one mask from the score-weighted query") {
    ModelConfig c3 = cfg;
    c3.use_mmp = false;
    Model<double> m3(c3, 25);
    randomize(m3.params(), 26);
    Tape<double> t3;
    auto o3 = m3.forward(t3, img, toks);
    CHECK(o3.masks.masks.shape() == Shape{1, 24, 24});
    CHECK(o3.masks.y.value().data == o3.masks.masks.value().data);
    // Recompute: merged query = scores . F_q, then one dynamic convolution.
    auto merged = matmul(o3.masks.scores, o3.queries.queries);
    auto params = m3.mask_decoder().kernel_params(t3, merged);
    auto ref = MaskDecoder<double>::dynamic_conv(o3.masks.shared, params);
    CHECK(ref.value().data == o3.masks.masks.value().data);
  }
}

TEST_CASE("probability-space aggregation stays in [0, 1]") {
  ModelConfig cfg;
  cfg.aggregate_probs = true;
  Model<double> model(cfg, 27);
  randomize(model.params(), 28);
  Tape<double> tape;
  auto out = model.forward(tape, random_image<double>(96, 7), tokens("red square"));
  for (double v : out.masks.y.value().data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  auto loss = model.loss(out, Tensor<double>({24, 24}, 1.0));
  CHECK(std::isfinite(loss.value().data[0]));
}

TEST_CASE("identical seeds build identical models and outputs") {
  ModelConfig cfg;
  Model<float> a(cfg, 42), b(cfg, 42), c(cfg, 43);
  for (size_t i = 0; i < a.params().all().size(); ++i) {
    CHECK(a.params().all()[i]->value.data == b.params().all()[i]->value.data);
  }
  CHECK(a.params().all()[0]->value.data != c.params().all()[0]->value.data);
  auto img = random_image<float>(96, 8);
  auto toks = tokens("blue circle");
  CHECK(a.predict(img, toks).data == b.predict(img, toks).data);
}

TEST_CASE("full-pipeline gradient check on a small model") {
  ModelConfig cfg = tiny_config();
  Model<double> model(cfg, 29);
  randomize(model.params(), 30);
  auto img = random_image<double>(cfg.image_size, 9);
  auto toks = tokens("small red circle");
  Tensor<double> target({16, 16}, 0.0);
  for (int i = 0; i < 40; ++i) target.data[i * 5] = 1.0;

  auto loss_value = [&] {
    Tape<double> tape(false);
    return model.loss(model.forward(tape, img, toks), target).value().data[0];
  };
  model.params().zero_grad();
  {
    Tape<double> tape;
    tape.backward(model.loss(model.forward(tape, img, toks), target));
  }
  std::mt19937_64 rng(31);
  const auto& all = model.params().all();
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Param<double>& p = *all[rng() % all.size()];
    const size_t i = rng() % p.value.data.size();
    const double orig = p.value.data[i];
    p.value.data[i] = orig + 1e-6;
    const double up = loss_value();
    p.value.data[i] = orig - 1e-6;
    const double down = loss_value();
    p.value.data[i] = orig;
    worst = std::max(worst, oracle::rel_error(p.grad[i], (up - down) / 2e-6));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("estimator scores ignore a constant shift of their logits") {
  ModelConfig cfg;
  Model<double> model(cfg, 32);
  randomize(model.params(), 33);
  std::mt19937_64 rng(34);
  auto queries = oracle::random_tensor(rng, {8, 64});
  Tape<double> tape;
  auto before = model.mask_decoder().estimate_scores(tape, tape.constant(queries)).value();
  model.params().find("mask.estimator.w_s.bias")->value.data[0] += 3.7;
  auto after = model.mask_decoder().estimate_scores(tape, tape.constant(queries)).value();
  CHECK(max_diff(before, after) < 1e-6);
}
