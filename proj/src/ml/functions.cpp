#include <cmath>
#include <deque>

#include "twinforge/core/error.hpp"
#include "twinforge/ml/runtime.hpp"

namespace twinforge::ml {

namespace {

class Identity final : public Function {
 public:
  explicit Identity(std::size_t n) : n_(n) {}
  std::size_t output_arity() const override { return n_; }
  std::vector<double> apply(const std::vector<double>& in) override { return in; }

 private:
  std::size_t n_;
};

class Linear final : public Function {
 public:
  Linear(std::vector<std::vector<double>> w, std::vector<double> b) : w_(std::move(w)), b_(std::move(b)) {}
  std::size_t output_arity() const override { return w_.size(); }
  std::vector<double> apply(const std::vector<double>& in) override {
    std::vector<double> out(w_.size());
    for (std::size_t r = 0; r < w_.size(); ++r) {
      double acc = b_[r];
      for (std::size_t c = 0; c < in.size(); ++c) acc += w_[r][c] * in[c];
      out[r] = acc;
    }
    return out;
  }

 private:
  std::vector<std::vector<double>> w_;
  std::vector<double> b_;
};

class LastValueHold final : public Function {
 public:
  explicit LastValueHold(std::size_t n) : held_(n, 0.0) {}
  std::size_t output_arity() const override { return held_.size(); }
  std::vector<double> apply(const std::vector<double>& in) override {
    for (std::size_t i = 0; i < in.size(); ++i)
      if (std::isfinite(in[i])) held_[i] = in[i];
    return held_;
  }

 private:
  std::vector<double> held_;
};

class MovingAverage final : public Function {
 public:
  MovingAverage(std::size_t n, std::size_t window) : n_(n), window_(window) {}
  std::size_t output_arity() const override { return n_; }
  std::vector<double> apply(const std::vector<double>& in) override {
    history_.push_back(in);
    if (history_.size() > window_) history_.pop_front();
    std::vector<double> out(n_, 0.0);
    for (const auto& row : history_)
      for (std::size_t i = 0; i < n_; ++i) out[i] += row[i];
    for (auto& v : out) v /= static_cast<double>(history_.size());
    return out;
  }

 private:
  std::size_t n_, window_;
  std::deque<std::vector<double>> history_;
};

std::vector<double> numbers(const Json& j, const char* what) {
  if (!j.is_array()) throw Error(Errc::InvalidSchema, std::string(what) + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(Errc::InvalidSchema, std::string(what) + " must be an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

std::unique_ptr<Function> make_linear(const Json& params, std::size_t n) {
  const Json w = params.value("weights", Json());
  std::vector<std::vector<double>> rows;
  if (w.is_array() && !w.empty() && w[0].is_array()) {
    for (const auto& row : w) rows.push_back(numbers(row, "weights row"));
  } else {
    rows.push_back(numbers(w, "weights"));
  }
  for (const auto& row : rows)
    if (row.size() != n)
      throw Error(Errc::InvalidSchema, "linear weights need " + std::to_string(n) + " columns, got " +
                                           std::to_string(row.size()));
  std::vector<double> bias(rows.size(), 0.0);
  const Json b = params.value("bias", Json(0.0));
  if (b.is_number()) {
    std::fill(bias.begin(), bias.end(), b.get<double>());
  } else {
    bias = numbers(b, "bias");
    if (bias.size() != rows.size()) throw Error(Errc::InvalidSchema, "bias length must match weight rows");
  }
  return std::make_unique<Linear>(std::move(rows), std::move(bias));
}

}  // namespace

std::unique_ptr<Function> make_function(const FunctionSpec& spec, std::size_t n) {
  if (!spec.params.is_object()) throw Error(Errc::InvalidSchema, "function params must be an object");
  if (spec.id == "identity") return std::make_unique<Identity>(n);
  if (spec.id == "linear") return make_linear(spec.params, n);
  if (spec.id == "last_value_hold") return std::make_unique<LastValueHold>(n);
  if (spec.id == "moving_average") {
    const Json w = spec.params.value("window", Json());
    if (!w.is_number_integer() || w.get<std::int64_t>() < 1)
      throw Error(Errc::InvalidSchema, "moving_average needs an integer window >= 1");
    return std::make_unique<MovingAverage>(n, w.get<std::size_t>());
  }
  throw Error(Errc::InvalidSchema, "unknown function '" + spec.id + "'");
}

std::string encode_output(const std::vector<double>& values) { return Json(values).dump(); }

std::vector<double> decode_output(std::string_view payload) {
  Json j = Json::parse(payload, nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw Error(Errc::DecodeError, "model output is not a JSON array");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(Errc::DecodeError, "model output holds a non-number");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace twinforge::ml
