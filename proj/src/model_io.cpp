#include "powerlab/model_io.hpp"

#include <fstream>
#include <stdexcept>

namespace powerlab {

using nlohmann::json;

json model_to_json(const ARModel& model) {
  json rows = json::array();
  for (std::size_t x = 0; x < model.prompt_count(); ++x) {
    json per_prompt = json::array();
    for (std::size_t t = 0; t < model.horizon(); ++t) {
      json per_depth = json::array();
      for (std::size_t node = 0; node < model.nodes_at_depth(t); ++node) {
        const auto& p = model.row_at(x, t, node).probs;
        per_depth.push_back(std::vector<double>(p.begin(), p.end()));
      }
      per_prompt.push_back(std::move(per_depth));
    }
    rows.push_back(std::move(per_prompt));
  }
  return json{{"vocab_sizes", model.vocab_sizes()},
              {"horizon", model.horizon()},
              {"prompt_ids", model.prompt_ids()},
              {"kind", model.kind()},
              {"rows", std::move(rows)}};
}

ARModel model_from_json(const json& doc) {
  const auto vocab = doc.at("vocab_sizes").get<std::vector<std::size_t>>();
  if (doc.at("horizon").get<std::size_t>() != vocab.size()) {
    throw std::invalid_argument("model json: horizon disagrees with vocab_sizes");
  }
  auto ids = doc.at("prompt_ids").get<std::vector<std::string>>();
  const auto& rows_json = doc.at("rows");
  if (!rows_json.is_array() || rows_json.size() != ids.size()) {
    throw std::invalid_argument("model json: rows must hold one entry per prompt");
  }
  ARModel::RowTable rows(ids.size());
  for (std::size_t x = 0; x < ids.size(); ++x) {
    const auto& per_prompt = rows_json[x];
    if (per_prompt.size() != vocab.size()) {
      throw std::invalid_argument("model json: rows[" + std::to_string(x) + "] needs one entry per step");
    }
    for (const auto& per_depth : per_prompt) {
      std::vector<ProbRow> depth_rows;
      depth_rows.reserve(per_depth.size());
      for (const auto& r : per_depth) {
        const auto values = r.get<std::vector<double>>();
        depth_rows.push_back(ProbRow::from_probs(
            Eigen::Map<const Eigen::ArrayXd>(values.data(), static_cast<Eigen::Index>(values.size()))));
      }
      rows[x].push_back(std::move(depth_rows));
    }
  }
  return ARModel(vocab, std::move(ids), std::move(rows), doc.value("kind", std::string("tabular")));
}

void save_model(const ARModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << model_to_json(model).dump() << '\n';
}

ARModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return model_from_json(json::parse(in));
}

}  // namespace powerlab
