#pragma once

// Named finite-difference checks over every registered operation plus the
// composed codec -> mask -> SI-SDR pipeline. Run by the CLI `gradcheck`
// subcommand and by the acceptance gate.

#include <string>
#include <vector>

#include "tse/codec.hpp"
#include "tse/gradcheck.hpp"
#include "tse/layers.hpp"
#include "tse/objective.hpp"

namespace tse {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double bound = 1e-4;

  bool passed() const { return max_rel_error < bound; }
};

inline std::vector<GradCheckCase> run_gradcheck_suite(double eps = 1e-5) {
  Rng rng(0x5eed);
  auto random_tensor = [&rng](Shape shape, double lo = -1.0, double hi = 1.0) {
    return Tensor<double>::uniform(rng, std::move(shape), lo, hi);
  };
  // rectifier-family inputs stay away from the kink
  auto off_kink = [&rng](Shape shape) {
    auto t = Tensor<double>::uniform(rng, std::move(shape), -1.0, 1.0);
    for (auto& v : t.values()) v += v >= 0 ? 0.25 : -0.25;
    return t;
  };

  std::vector<GradCheckCase> results;
  auto check = [&](const std::string& name, const GradCheckFn& fn,
                   std::vector<Tensor<double>> inputs, double bound = 1e-4) {
    results.push_back({name, grad_check(fn, std::move(inputs), eps), bound});
  };

  check("add", [](auto& in) { return add(in[0], in[1]); },
        {random_tensor({12}), random_tensor({12})});
  check("sub", [](auto& in) { return sub(in[0], in[1]); },
        {random_tensor({12}), random_tensor({12})});
  check("mul", [](auto& in) { return mul(in[0], in[1]); },
        {random_tensor({12}), random_tensor({12})});
  check("div", [](auto& in) { return div(in[0], in[1]); },
        {random_tensor({8}), random_tensor({8}, 0.5, 2.0)});
  check("scale_by", [](auto& in) { return scale_by(in[0], in[1]); },
        {random_tensor({9}), random_tensor({1})});
  check("matmul", [](auto& in) { return matmul(in[0], in[1]); },
        {random_tensor({4, 5}), random_tensor({5, 3})});
  check("transpose", [](auto& in) { return transpose(in[0]); }, {random_tensor({3, 6})});
  check("conv1d", [](auto& in) { return conv1d(in[0], in[1], 3); },
        {random_tensor({48}), random_tensor({4, 9})});
  check("conv1d_transpose", [](auto& in) { return conv1d_transpose(in[0], in[1], 3); },
        {random_tensor({7, 4}), random_tensor({4, 9})});
  check("depthwise_conv1d", [](auto& in) { return depthwise_conv1d(in[0], in[1], 2); },
        {random_tensor({14, 3}), random_tensor({3, 3})});
  check("attention_block", [](auto& in) { return attention_block(in[0], in[1], in[2]); },
        {random_tensor({6, 4}), random_tensor({6, 4}), random_tensor({6, 4})});
  check("causal_row_softmax", [](auto& in) { return causal_row_softmax(in[0]); },
        {random_tensor({5, 5})});
  check("layer_norm_rows", [](auto& in) { return layer_norm_rows(in[0]); },
        {random_tensor({5, 7})});
  check("layer_norm_affine", [](auto& in) { return layer_norm_affine(in[0], in[1], in[2]); },
        {random_tensor({5, 7}), random_tensor({7}, 0.5, 1.5), random_tensor({7})});
  check("global_norm_affine", [](auto& in) { return global_norm_affine(in[0], in[1], in[2]); },
        {random_tensor({5, 7}), random_tensor({7}, 0.5, 1.5), random_tensor({7})});
  check("linear", [](auto& in) { return linear(in[0], in[1], in[2]); },
        {random_tensor({4, 5}), random_tensor({5, 3}), random_tensor({3})});
  check("relu", [](auto& in) { return relu(in[0]); }, {off_kink({20})});
  check("prelu", [](auto& in) { return prelu(in[0], in[1]); },
        {off_kink({20}), Tensor<double>::scalar(0.3)});
  check("sigmoid", [](auto& in) { return sigmoid(in[0]); }, {random_tensor({16})});
  check("tanh", [](auto& in) { return tanh_op(in[0]); }, {random_tensor({16})});
  check("log", [](auto& in) { return log_op(in[0]); }, {random_tensor({8}, 0.5, 3.0)});
  check("floor_at", [](auto& in) { return floor_at(in[0], 0.0); }, {off_kink({16})});
  check("sum", [](auto& in) { return sum(in[0]); }, {random_tensor({11})});
  check("mean", [](auto& in) { return mean(in[0]); }, {random_tensor({11})});
  check("dot", [](auto& in) { return dot(in[0], in[1]); },
        {random_tensor({9}), random_tensor({9})});
  check("mean_rows", [](auto& in) { return mean_rows(in[0]); }, {random_tensor({6, 4})});
  check("masked_mean_rows",
        [](auto& in) { return masked_mean_rows(in[0], {1, 0, 1, 1, 0, 1}); },
        {random_tensor({6, 4})});
  check("add_rowvec", [](auto& in) { return add_rowvec(in[0], in[1]); },
        {random_tensor({5, 3}), random_tensor({3})});
  check("mul_rowvec", [](auto& in) { return mul_rowvec(in[0], in[1]); },
        {random_tensor({5, 3}), random_tensor({3})});
  check("tile_rows", [](auto& in) { return tile_rows(in[0], 6); }, {random_tensor({5})});
  check("concat_cols", [](auto& in) { return concat_cols(in[0], in[1]); },
        {random_tensor({4, 2}), random_tensor({4, 3})});
  check("concat1d", [](auto& in) { return concat1d(in[0], in[1]); },
        {random_tensor({5}), random_tensor({7})});
  check("slice1d", [](auto& in) { return slice1d(in[0], 2, 6); }, {random_tensor({12})});
  check("slice_cols", [](auto& in) { return slice_cols(in[0], 1, 2); },
        {random_tensor({5, 4})});
  check("crop_or_pad",
        [](auto& in) { return concat1d(crop_or_pad(in[0], 5), crop_or_pad(in[0], 13)); },
        {random_tensor({9})});
  check("embedding_rows", [](auto& in) { return embedding_rows(in[0], {0, 2, 1, 2}); },
        {random_tensor({3, 5})});
  check("si_sdr_loss", [](auto& in) { return si_sdr_loss(in[0], in[1]); },
        {random_tensor({64}), random_tensor({64})});

  // composed pipeline: encode -> cue-conditioned sigmoid mask -> decode -> loss
  {
    CodecConfig codec;
    codec.n_filters = 6;
    codec.filter_len = 8;
    codec.hop = 4;
    check("codec_mask_sisdr_pipeline",
          [codec](auto& in) {
            auto feats = encode(in[0], codec, in[1]);
            auto cond = tile_rows(in[4], feats.dim(0));
            auto mask = sigmoid(matmul(concat_cols(feats, cond), in[5]));
            auto est = decode(mul(feats, mask), codec, in[2], in[0].dim(0));
            return si_sdr_loss(est, in[3]);
          },
          {random_tensor({72}), random_tensor({6, 8}), random_tensor({6, 8}),
           random_tensor({72}), random_tensor({4}), random_tensor({10, 6})});
  }
  return results;
}

}  // namespace tse
