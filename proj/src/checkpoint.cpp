#include "gradsup/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace gradsup {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "gradsup-checkpoint";
constexpr int kVersion = 1;

void require_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw std::runtime_error("checkpoint " + what +
                               " contains a non-finite value");
}

}  // namespace

void save_checkpoint(const ModelParams& params,
                     const std::filesystem::path& path) {
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["seed"] = params.seed;
  j["activation"] = activation_name(params.hidden);
  j["layers"] = json::array();
  for (const Layer& layer : params.layers) {
    require_finite(layer.w, "weights");
    require_finite(layer.b, "biases");
    json jl;
    jl["rows"] = layer.w.rows();
    jl["cols"] = layer.w.cols();
    jl["w"] = std::vector<double>(layer.w.data().begin(), layer.w.data().end());
    jl["b"] = std::vector<double>(layer.b.data().begin(), layer.b.data().end());
    j["layers"].push_back(std::move(jl));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " +
                             e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat)
      throw std::runtime_error("not a model checkpoint");
    if (j.at("version").get<int>() != kVersion)
      throw std::runtime_error("unsupported checkpoint version");
    ModelParams params;
    params.seed = j.at("seed").get<std::uint64_t>();
    params.hidden = parse_activation(j.at("activation").get<std::string>());
    for (const auto& jl : j.at("layers")) {
      const auto rows = jl.at("rows").get<std::size_t>();
      const auto cols = jl.at("cols").get<std::size_t>();
      Layer layer;
      layer.w = Tensor::matrix(rows, cols, jl.at("w").get<std::vector<double>>());
      auto b = jl.at("b").get<std::vector<double>>();
      if (b.size() != rows)
        throw std::runtime_error("bias length does not match weight rows");
      layer.b = Tensor::vec(std::move(b));
      require_finite(layer.w, "weights");
      require_finite(layer.b, "biases");
      params.layers.push_back(std::move(layer));
    }
    if (params.layers.empty()) throw std::runtime_error("checkpoint has no layers");
    // Surface malformed shape chains at load time, not first forward.
    (void)Model(params);
    return params;
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " +
                             e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " +
                             e.what());
  }
}

}  // namespace gradsup
