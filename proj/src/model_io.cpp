#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "claims/errors.hpp"
#include "claims/model.hpp"

namespace claims {

namespace {

static_assert(std::endian::native == std::endian::little,
              "weights.bin is little-endian; big-endian hosts are not supported");

constexpr const char* kManifestName = "model.json";
constexpr const char* kWeightsName = "weights.bin";

}  // namespace

void save_model(const Model& model, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("save_model: cannot create directory " + dir + ": " + ec.message());

  const auto params = model.parameters();
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = nlohmann::json::parse(to_json(model.config()));
  manifest["preprocess"] = {{"log_min", model.preprocess().log_min},
                            {"log_max", model.preprocess().log_max}};
  manifest["training"] = {{"epochs_run", model.meta().epochs_run},
                          {"best_epoch", model.meta().best_epoch},
                          {"best_val_loss", model.meta().best_val_loss}};
  manifest["vocabulary"] = {{"v_code", model.config().v_code},
                            {"v_factor", model.config().v_factor}};

  std::vector<double> blob;
  nlohmann::json plist = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const ag::Parameter* p : params) {
    plist.push_back({{"name", p->name},
                     {"rows", p->value.rows()},
                     {"cols", p->value.cols()},
                     {"offset", offset}});
    blob.insert(blob.end(), p->value.data(), p->value.data() + p->value.size());
    offset += p->value.size();
  }
  manifest["parameters"] = std::move(plist);
  manifest["weights"] = {
      {"file", kWeightsName},
      {"count", offset},
      {"fnv1a64", fnv1a64(blob.data(), blob.size() * sizeof(double))}};

  const fs::path weights_path = fs::path(dir) / kWeightsName;
  {
    std::ofstream out(weights_path, std::ios::binary);
    if (!out) throw IoError("save_model: cannot open " + weights_path.string());
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(double)));
    if (!out) throw IoError("save_model: write failed for " + weights_path.string());
  }
  const fs::path manifest_path = fs::path(dir) / kManifestName;
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw IoError("save_model: cannot open " + manifest_path.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("save_model: write failed for " + manifest_path.string());
}

std::unique_ptr<Model> load_model(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / kManifestName;
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("load_model: cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("load_model: " + manifest_path.string() + ": " + e.what());
  }

  try {
    if (manifest.at("format_version").get<int>() != 1)
      throw InputError("load_model: unsupported format_version");
    ModelConfig config = model_config_from_json(manifest.at("config").dump());
    auto model = std::make_unique<Model>(config);
    model->set_preprocess(PreprocessStats{
        manifest.at("preprocess").at("log_min").get<double>(),
        manifest.at("preprocess").at("log_max").get<double>()});
    model->meta().epochs_run = manifest.at("training").at("epochs_run").get<int>();
    model->meta().best_epoch = manifest.at("training").at("best_epoch").get<int>();
    model->meta().best_val_loss = manifest.at("training").at("best_val_loss").get<double>();

    const fs::path weights_path =
        fs::path(dir) / manifest.at("weights").at("file").get<std::string>();
    const std::int64_t count = manifest.at("weights").at("count").get<std::int64_t>();
    std::vector<double> blob(static_cast<std::size_t>(count));
    {
      std::ifstream win(weights_path, std::ios::binary);
      if (!win) throw IoError("load_model: cannot open " + weights_path.string());
      win.read(reinterpret_cast<char*>(blob.data()),
               static_cast<std::streamsize>(blob.size() * sizeof(double)));
      if (win.gcount() != static_cast<std::streamsize>(blob.size() * sizeof(double)))
        throw InputError("load_model: " + weights_path.string() + " is truncated");
      char extra;
      if (win.read(&extra, 1))
        throw InputError("load_model: " + weights_path.string() +
                         " is longer than the manifest declares");
    }
    const std::uint64_t expect = manifest.at("weights").at("fnv1a64").get<std::uint64_t>();
    const std::uint64_t got = fnv1a64(blob.data(), blob.size() * sizeof(double));
    if (expect != got)
      throw InputError("load_model: weights checksum mismatch in " + weights_path.string());

    const auto params = model->parameters();
    const auto& plist = manifest.at("parameters");
    if (plist.size() != params.size())
      throw InputError("load_model: manifest lists " + std::to_string(plist.size()) +
                       " parameters, model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = plist[i];
      ag::Parameter* p = params[i];
      if (entry.at("name").get<std::string>() != p->name)
        throw InputError("load_model: parameter order mismatch at '" + p->name + "'");
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      if (rows != p->value.rows() || cols != p->value.cols())
        throw InputError("load_model: shape mismatch for '" + p->name + "'");
      const auto off = entry.at("offset").get<std::int64_t>();
      if (off < 0 || off + p->value.size() > count)
        throw InputError("load_model: offset out of range for '" + p->name + "'");
      std::memcpy(p->value.data(), blob.data() + off,
                  static_cast<std::size_t>(p->value.size()) * sizeof(double));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("load_model: " + manifest_path.string() + ": " + e.what());
  }
}

}  // namespace claims
