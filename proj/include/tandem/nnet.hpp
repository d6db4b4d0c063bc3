#pragma once

// Neural encoder, shared decoder and downstream head.

#include <array>
#include <vector>

#include "tandem/autodiff.hpp"
#include "tandem/data.hpp"
#include "tandem/params.hpp"
#include "tandem/rng.hpp"

namespace tandem {

constexpr double kLeakySlope = 0.01;
constexpr std::size_t kEncoderLayers = 4;

struct Dense {
  ad::Var weight;  // in x out
  ad::Var bias;    // 1 x out

  // weight ~ N(0, gain / fan_in), bias = 0
  Dense(std::size_t in, std::size_t out, double gain, Rng& init);
  ad::Var forward(const ad::Var& x) const;
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

// Dense -> batchnorm -> leaky ReLU.
struct NormBlock {
  Dense dense;
  ad::Var gamma;
  ad::Var beta;
  ad::BatchNormStats stats;

  NormBlock(std::size_t in, std::size_t out, Rng& init);
  ad::Var forward(const ad::Var& x, bool train);
};

// Layer widths {D, h1, h2, h3, k}: the hidden widths interpolate geometrically
// from D to k and snap to the nearest power of two.
std::array<std::size_t, kEncoderLayers + 1> encoder_widths(std::size_t input_dim,
                                                           std::size_t latent_dim);

class MlpEncoder {
 public:
  MlpEncoder(std::size_t input_dim, std::size_t latent_dim, Rng& init);
  // Training mode uses batch statistics and needs at least two rows.
  ad::Var forward(const ad::Var& x, bool train);
  std::size_t input_dim() const { return blocks_.front().dense.in(); }
  std::size_t latent_dim() const { return blocks_.back().dense.out(); }
  std::vector<NormBlock>& blocks() { return blocks_; }
  void collect(const std::string& prefix, ParamList& params, BufferList& buffers);

 private:
  std::vector<NormBlock> blocks_;
};

// Mirror of the encoder (k -> ... -> D); hidden blocks as in the encoder, a
// linear output layer.
class SharedDecoder {
 public:
  SharedDecoder(std::size_t latent_dim, std::size_t output_dim, Rng& init);
  ad::Var forward(const ad::Var& z, bool train);
  std::size_t latent_dim() const { return blocks_.front().dense.in(); }
  std::size_t output_dim() const { return output_.out(); }
  std::vector<NormBlock>& blocks() { return blocks_; }
  Dense& output_layer() { return output_; }
  void collect(const std::string& prefix, ParamList& params, BufferList& buffers);

 private:
  std::vector<NormBlock> blocks_;
  Dense output_;
};

// Single dense layer k -> C logits (classification) or k -> 1 (regression).
class DownstreamHead {
 public:
  DownstreamHead(data::Task task, std::size_t latent_dim, std::size_t num_classes, Rng& init);
  ad::Var forward(const ad::Var& z) const { return layer_.forward(z); }
  data::Task task() const { return task_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t outputs() const { return layer_.out(); }
  Dense& layer() { return layer_; }
  const Dense& layer() const { return layer_; }
  void collect(const std::string& prefix, ParamList& params) const;

 private:
  data::Task task_;
  std::size_t num_classes_;
  Dense layer_;
};

// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace tandem
