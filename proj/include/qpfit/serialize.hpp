#pragma once

#include "qpfit/converter.hpp"
#include "qpfit/explicit_pwa.hpp"
#include "qpfit/mpc.hpp"
#include "qpfit/qpnet.hpp"
#include "qpfit/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace qpfit {

using json = nlohmann::json;

json matrix_to_json(const MatrixXd& M);
MatrixXd matrix_from_json(const json& j);
json vector_to_json(const VectorXd& v);
VectorXd vector_from_json(const json& j);

json projection_to_json(const ProjectionSpec& p);
ProjectionSpec projection_from_json(const json& j);

json model_to_json(const QPNetParams& p);
QPNetParams model_from_json(const json& j);

json condensed_to_json(const CondensedQP& c);
CondensedQP condensed_from_json(const json& j);

json pwa_to_json(const PWAController& c);
PWAController pwa_from_json(const json& j);

/// Flat little-endian export: uint32 n, m, region_count; per region uint32
/// n_h then float32 E (row-major), e, K (row-major), k; uint32 projection
/// kind (0 none, 1 box, 2 psi_sat, 3 polyhedron) then its float32 payload.
/// The byte count equals ComplexityReport::storage_bytes.
void pwa_write_binary(const PWAController& c, const std::filesystem::path& path);

void dataset_write_csv(const Dataset& ds, const std::filesystem::path& csv_path,
                       const std::filesystem::path& sidecar_path);
Dataset dataset_read_csv(const std::filesystem::path& csv_path,
                         const std::filesystem::path& sidecar_path);

void train_report_write_csv(const TrainReport& rep, const std::filesystem::path& path);

void trajectory_write_csv(const SimResult& sim, const std::filesystem::path& path);

void write_json_file(const json& j, const std::filesystem::path& path);
json read_json_file(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace qpfit
