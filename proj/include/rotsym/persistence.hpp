#pragma once

#include <string>

#include "rotsym/analysis.hpp"
#include "rotsym/matching.hpp"
#include "rotsym/model.hpp"

namespace rotsym {

// Model checkpoints: magic line RSYM1, a config line, then one
// `tensor <name> <rows> <cols>` line plus one base64 payload line per tensor
// (little-endian 64-bit floats, row-major, canonical tensor order), closed by
// `end`. Round-trips are bit-exact and the rendering is canonical: equal
// models produce identical bytes.
std::string model_to_string(const TransformerModel& model);
TransformerModel model_from_string(const std::string& text);
void save_model(const TransformerModel& model, const std::string& path);
TransformerModel load_model(const std::string& path);

// Datasets: magic line RSDS1, a meta line, one `item <label> <tokens...>`
// line per item, closed by `end`. Integers round-trip exactly.
std::string dataset_to_string(const SyntheticDataset& dataset);
SyntheticDataset dataset_from_string(const std::string& text);
void save_dataset(const SyntheticDataset& dataset, const std::string& path);
SyntheticDataset load_dataset(const std::string& path);

// Match reports are write-only JSON. Wall time is intentionally left out so
// identical runs serialize to identical bytes.
std::string match_report_to_json(const MatchReport& report);
void save_match_report(const MatchReport& report, const std::string& path);

// Loss curves are write-only CSV (see loss_curve_csv).
void save_loss_curve(const LossCurve& curve, const std::string& path);

} // namespace rotsym
