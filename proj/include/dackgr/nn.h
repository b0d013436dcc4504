#ifndef DACKGR_NN_H_
#define DACKGR_NN_H_

#include <deque>
#include <string>
#include <vector>

#include "dackgr/autodiff.h"

namespace dackgr {

// Owns named parameters with stable addresses.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value);
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  Parameter* find(const std::string& name);
  void zero_grad();
  std::size_t count() const { return params_.size(); }

 private:
  std::deque<Parameter> params_;
};

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng);

// y = x W + b
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in,
         std::size_t out, Rng& rng);

  ad::Var operator()(ad::Graph& g, ad::Var x) const;
  std::size_t in() const { return weight_->value.rows(); }
  std::size_t out() const { return weight_->value.cols(); }
  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

struct LstmState {
  std::vector<ad::Var> h;  // per layer, [batch x hidden]
  std::vector<ad::Var> c;
  ad::Var top() const { return h.back(); }
};

// Stacked LSTM with gates ordered (input, forget, cell, output) and forget
// bias initialized to 1.
class Lstm {
 public:
  Lstm() = default;
  Lstm(ParameterStore& store, const std::string& name, std::size_t input,
       std::size_t hidden, std::size_t layers, Rng& rng);

  std::size_t hidden() const { return hidden_; }
  std::size_t layers() const { return layers_.size(); }
  std::size_t input() const { return input_; }

  LstmState zero_state(ad::Graph& g, std::size_t batch) const;
  LstmState step(ad::Graph& g, ad::Var x, const LstmState& prev) const;
  // Reorders every layer's state rows, e.g. after beam pruning.
  static LstmState gather(const LstmState& s, std::span<const int> rows);

  struct Layer {
    Parameter* weight;  // [(in + hidden) x 4 hidden]
    Parameter* bias;    // [1 x 4 hidden]
  };
  const std::vector<Layer>& layer_params() const { return layers_; }

 private:
  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  std::vector<Layer> layers_;
};

// One LSTM cell update for a single layer. Returns (h, c).
std::pair<ad::Var, ad::Var> lstm_step(ad::Graph& g, ad::Var x, ad::Var h,
                                      ad::Var c, Parameter& weight,
                                      Parameter& bias);

}  // namespace dackgr

#endif  // DACKGR_NN_H_
