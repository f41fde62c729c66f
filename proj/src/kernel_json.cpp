#include <set>

#include "milsense/errors.hpp"
#include "milsense/kernels.hpp"

namespace milsense {

nlohmann::json kernel_to_json(const KernelSpec& spec) {
  nlohmann::json j;
  j["variant"] = to_string(spec.kind);
  if (spec.is_leaf()) {
    j["variance"] = spec.hyper.variance;
    j["lengthscales"] = spec.hyper.lengthscales;
    if (spec.kind == KernelKind::QuasiPeriodicMatern32) j["period"] = spec.hyper.period;
    if (spec.input_dim != static_cast<int>(spec.hyper.lengthscales.size())) j["input_dim"] = spec.input_dim;
  } else {
    j["children"] = nlohmann::json::array();
    for (const auto& c : spec.children) j["children"].push_back(kernel_to_json(c));
  }
  return j;
}

KernelSpec kernel_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"variant", "variance", "lengthscales", "period", "children",
                                           "input_dim"};
  if (!j.is_object()) throw ParseError("kernel spec must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ParseError("unknown kernel key '" + key + "'");
  if (!j.contains("variant")) throw ParseError("kernel spec missing 'variant'");

  KernelSpec s;
  s.kind = kernel_kind_from_string(j.at("variant").get<std::string>());
  try {
    if (s.is_leaf()) {
      s.hyper.variance = j.value("variance", 1.0);
      s.hyper.lengthscales = j.value("lengthscales", std::vector<double>{1.0});
      s.hyper.period = j.value("period", 1.0);
      s.input_dim = j.value("input_dim", static_cast<int>(s.hyper.lengthscales.size()));
    } else {
      for (const auto& c : j.at("children")) s.children.push_back(kernel_from_json(c));
      if (s.kind == KernelKind::Separable && s.children.size() == 2)
        s.input_dim = s.children[0].dim() + s.children[1].dim();
      else if (!s.children.empty())
        s.input_dim = s.children[0].dim();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("kernel spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace milsense
