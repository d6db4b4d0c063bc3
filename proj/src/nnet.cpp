#include "tandem/nnet.hpp"

#include <cmath>

#include "tandem/errors.hpp"

namespace tandem {

Dense::Dense(std::size_t in, std::size_t out, double gain, Rng& init) {
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(in)));
  Tensor w(in, out);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(init);
  weight = ad::parameter(std::move(w));
  bias = ad::parameter(Tensor(1, out));
}

ad::Var Dense::forward(const ad::Var& x) const {
  if (x.cols() != in())
    throw ShapeError("dense layer expects " + std::to_string(in()) + " inputs, got " +
                     std::to_string(x.cols()));
  return ad::add_row(ad::matmul(x, weight), bias);
}

NormBlock::NormBlock(std::size_t in, std::size_t out, Rng& init)
    : dense(in, out, 2.0, init),
      gamma(ad::parameter(Tensor(1, out, 1.0))),
      beta(ad::parameter(Tensor(1, out, 0.0))),
      stats(out) {}

ad::Var NormBlock::forward(const ad::Var& x, bool train) {
  return ad::leaky_relu(ad::batchnorm(dense.forward(x), gamma, beta, stats, train), kLeakySlope);
}

std::array<std::size_t, kEncoderLayers + 1> encoder_widths(std::size_t input_dim,
                                                           std::size_t latent_dim) {
  std::array<std::size_t, kEncoderLayers + 1> w{};
  w.front() = input_dim;
  w.back() = latent_dim;
  const double ld = std::log2(static_cast<double>(input_dim));
  const double lk = std::log2(static_cast<double>(latent_dim));
  for (std::size_t i = 1; i < kEncoderLayers; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(kEncoderLayers);
    w[i] = std::size_t{1} << static_cast<unsigned>(std::llround(ld + t * (lk - ld)));
  }
  return w;
}

MlpEncoder::MlpEncoder(std::size_t input_dim, std::size_t latent_dim, Rng& init) {
  const auto w = encoder_widths(input_dim, latent_dim);
  for (std::size_t i = 0; i < kEncoderLayers; ++i) blocks_.emplace_back(w[i], w[i + 1], init);
}

ad::Var MlpEncoder::forward(const ad::Var& x, bool train) {
  ad::Var h = x;
  for (NormBlock& b : blocks_) h = b.forward(h, train);
  return h;
}

void MlpEncoder::collect(const std::string& prefix, ParamList& params, BufferList& buffers) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string base = prefix + ".block" + std::to_string(i);
    params.push_back({base + ".weight", blocks_[i].dense.weight});
    params.push_back({base + ".bias", blocks_[i].dense.bias});
    params.push_back({base + ".gamma", blocks_[i].gamma});
    params.push_back({base + ".beta", blocks_[i].beta});
    buffers.emplace_back(base + ".running_mean", &blocks_[i].stats.running_mean);
    buffers.emplace_back(base + ".running_var", &blocks_[i].stats.running_var);
  }
}

SharedDecoder::SharedDecoder(std::size_t latent_dim, std::size_t output_dim, Rng& init)
    : output_([&] {
        // Hidden blocks are built first so initialization order follows the data flow.
        const auto w = encoder_widths(output_dim, latent_dim);
        for (std::size_t i = kEncoderLayers; i > 1; --i) blocks_.emplace_back(w[i], w[i - 1], init);
        return Dense(w[1], w[0], 1.0, init);
      }()) {}

ad::Var SharedDecoder::forward(const ad::Var& z, bool train) {
  ad::Var h = z;
  for (NormBlock& b : blocks_) h = b.forward(h, train);
  return output_.forward(h);
}

void SharedDecoder::collect(const std::string& prefix, ParamList& params, BufferList& buffers) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string base = prefix + ".block" + std::to_string(i);
    params.push_back({base + ".weight", blocks_[i].dense.weight});
    params.push_back({base + ".bias", blocks_[i].dense.bias});
    params.push_back({base + ".gamma", blocks_[i].gamma});
    params.push_back({base + ".beta", blocks_[i].beta});
    buffers.emplace_back(base + ".running_mean", &blocks_[i].stats.running_mean);
    buffers.emplace_back(base + ".running_var", &blocks_[i].stats.running_var);
  }
  params.push_back({prefix + ".out.weight", output_.weight});
  params.push_back({prefix + ".out.bias", output_.bias});
}

DownstreamHead::DownstreamHead(data::Task task, std::size_t latent_dim, std::size_t num_classes,
                               Rng& init)
    : task_(task),
      num_classes_(task == data::Task::kClassification ? num_classes : 0),
      layer_(latent_dim, task == data::Task::kClassification ? num_classes : 1, 1.0, init) {
  if (task == data::Task::kClassification && num_classes < 2)
    throw FinetuneError("classification head needs at least two classes");
}

void DownstreamHead::collect(const std::string& prefix, ParamList& params) const {
  params.push_back({prefix + ".weight", layer_.weight});
  params.push_back({prefix + ".bias", layer_.bias});
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace tandem
