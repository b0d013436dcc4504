#include "dackgr/nn.h"

#include <cmath>
#include <stdexcept>

namespace dackgr {

Parameter& ParameterStore::add(std::string name, Tensor value) {
  if (find(name) != nullptr)
    throw std::invalid_argument("duplicate parameter name: " + name);
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng) {
  Tensor t(std::move(shape));
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in,
               std::size_t out, Rng& rng)
    : weight_(&store.add(name + ".weight",
                         xavier_uniform({in, out}, in, out, rng))),
      bias_(&store.add(name + ".bias", Tensor({1, out}))) {}

ad::Var Linear::operator()(ad::Graph& g, ad::Var x) const {
  return ad::add_bias(ad::matmul(x, g.parameter(*weight_)),
                      g.parameter(*bias_));
}

Lstm::Lstm(ParameterStore& store, const std::string& name, std::size_t input,
           std::size_t hidden, std::size_t layers, Rng& rng)
    : input_(input), hidden_(hidden) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = (l == 0 ? input : hidden) + hidden;
    const std::string prefix = name + ".l" + std::to_string(l);
    auto& w = store.add(prefix + ".weight",
                        xavier_uniform({in, 4 * hidden}, in, hidden, rng));
    Tensor b({1, 4 * hidden});
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
    auto& bias = store.add(prefix + ".bias", std::move(b));
    layers_.push_back({&w, &bias});
  }
}

LstmState Lstm::zero_state(ad::Graph& g, std::size_t batch) const {
  LstmState s;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    s.h.push_back(g.constant(Tensor({batch, hidden_})));
    s.c.push_back(g.constant(Tensor({batch, hidden_})));
  }
  return s;
}

LstmState Lstm::step(ad::Graph& g, ad::Var x, const LstmState& prev) const {
  LstmState next;
  ad::Var input = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto [h, c] = lstm_step(g, input, prev.h[l], prev.c[l],
                            *layers_[l].weight, *layers_[l].bias);
    next.h.push_back(h);
    next.c.push_back(c);
    input = h;
  }
  return next;
}

LstmState Lstm::gather(const LstmState& s, std::span<const int> rows) {
  LstmState out;
  for (std::size_t l = 0; l < s.h.size(); ++l) {
    out.h.push_back(ad::gather_rows(s.h[l], rows));
    out.c.push_back(ad::gather_rows(s.c[l], rows));
  }
  return out;
}

std::pair<ad::Var, ad::Var> lstm_step(ad::Graph& g, ad::Var x, ad::Var h,
                                      ad::Var c, Parameter& weight,
                                      Parameter& bias) {
  const std::size_t hidden = h.cols();
  if (weight.value.rows() != x.cols() + hidden ||
      weight.value.cols() != 4 * hidden) {
    throw ShapeError("lstm_step: weight " + shape_string(weight.value.shape()) +
                     " does not fit input " + shape_string(x.shape()) +
                     " and hidden " + std::to_string(hidden));
  }
  ad::Var z = ad::add_bias(ad::matmul(ad::concat({x, h}), g.parameter(weight)),
                           g.parameter(bias));
  ad::Var i = ad::sigmoid(ad::slice_cols(z, 0, hidden));
  ad::Var f = ad::sigmoid(ad::slice_cols(z, hidden, hidden));
  ad::Var u = ad::tanh(ad::slice_cols(z, 2 * hidden, hidden));
  ad::Var o = ad::sigmoid(ad::slice_cols(z, 3 * hidden, hidden));
  ad::Var c_next = ad::add(ad::mul(f, c), ad::mul(i, u));
  ad::Var h_next = ad::mul(o, ad::tanh(c_next));
  return {h_next, c_next};
}

}  // namespace dackgr
