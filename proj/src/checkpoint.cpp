#include "pmdef/checkpoint.hpp"

#include "pmdef/binary_io.hpp"
#include "pmdef/error.hpp"

namespace pmdef {

std::vector<char> encode_checkpoint(const Model& model, const HiddenProbe* probe) {
  nlohmann::json header = {
      {"format", "pmdef-model"},
      {"version", 1},
      {"spec", to_json(model.spec())},
      {"seed", model.seed()},
      {"init", kInitScheme},
      {"preprocessing", {{"standardize_per_image", model.preprocessing().standardize_per_image}}},
  };
  std::vector<NamedTensor> tensors;
  nlohmann::json frozen = nlohmann::json::array();
  for (const auto& [index, p] : model.parameters().layers) {
    tensors.push_back({"layer" + std::to_string(index) + ".weight", p.weight});
    tensors.push_back({"layer" + std::to_string(index) + ".bias", p.bias});
    if (p.frozen) frozen.push_back(index);
  }
  header["frozen_layers"] = std::move(frozen);
  if (probe != nullptr) {
    header["probe"] = {{"source_layer", probe->source_layer}, {"dim", probe->dim()}};
    tensors.push_back({"probe.weight", probe->weight});
    tensors.push_back({"probe.bias", probe->bias});
  }
  return encode_container(kCheckpointMagic, std::move(header), tensors);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const HiddenProbe* probe) {
  write_file(path, encode_checkpoint(model, probe));
}

Model load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path, kCheckpointMagic);
  const auto where = path.string();
  try {
    const ModelSpec spec = model_spec_from_json(c.header.at("spec"));
    const auto shapes = spec.layer_shapes();
    ParameterStore params;
    std::size_t used = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (!std::holds_alternative<DenseLayer>(spec.layers[i]) && !std::holds_alternative<ConvLayer>(spec.layers[i]))
        continue;
      const auto prefix = "layer" + std::to_string(i);
      if (!c.contains(prefix + ".weight") || !c.contains(prefix + ".bias"))
        throw LengthMismatchError(where + ": spec declares parameters for layer " + std::to_string(i) +
                                  " but the file has none");
      params.layers.emplace(i, LayerParameters{c.get(prefix + ".weight"), c.get(prefix + ".bias"), false});
      used += 2;
    }
    const bool has_probe = c.header.contains("probe");
    if (c.tensors.size() != used + (has_probe ? 2 : 0))
      throw LengthMismatchError(where + ": " + std::to_string(c.tensors.size()) + " weight blocks, spec needs " +
                                std::to_string(used));
    for (const auto& index : c.header.value("frozen_layers", nlohmann::json::array())) {
      auto it = params.layers.find(index.get<std::size_t>());
      if (it != params.layers.end()) it->second.frozen = true;
    }
    Preprocessing pre;
    pre.standardize_per_image = c.header.at("preprocessing").value("standardize_per_image", false);
    try {
      return Model(spec, std::move(params), c.header.at("seed").get<std::uint64_t>(), pre);
    } catch (const SpecMismatchError& e) {
      throw LengthMismatchError(where + ": " + e.what());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": malformed checkpoint header: " + e.what());
  } catch (const SpecError& e) {
    throw ParseError(where + ": invalid stored spec: " + e.what());
  }
}

Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Model model = load_checkpoint(path);
  if (!(model.spec() == expected))
    throw SpecMismatchError(path.string() + ": checkpoint holds spec '" + model.spec().name +
                            "' which differs from the expected '" + expected.name + "'");
  return model;
}

std::optional<HiddenProbe> load_probe(const std::filesystem::path& path) {
  const Container c = read_container(path, kCheckpointMagic);
  if (!c.header.contains("probe")) return std::nullopt;
  HiddenProbe probe;
  probe.source_layer = c.header["probe"].at("source_layer").get<std::size_t>();
  probe.weight = c.get("probe.weight");
  probe.bias = c.get("probe.bias");
  return probe;
}

}  // namespace pmdef
