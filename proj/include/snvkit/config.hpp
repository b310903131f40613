#pragma once

#include "snvkit/emission.hpp"
#include "snvkit/feedback.hpp"
#include "snvkit/kinetics.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace snvkit::config {

using Json = nlohmann::json;

/// Frozen simulator constants: implantation, rates, landscape and emission.
struct Calibration {
  int version = 0;
  kinetics::ImplantModel implant;
  kinetics::RateModel rates;
  kinetics::EnergyLandscape landscape;
  kinetics::EmissionModel emission;
};

/// The calibration shipped in config/default_calibration.json.
const Json& default_calibration_json();
Calibration default_calibration();
/// Full calibration document; missing or unknown keys raise ConfigError naming the path.
Calibration calibration_from_json(const Json& j);
Json to_json(const Calibration& c);

using feedback::StopRule;

struct ProtocolConfig {
  StopRule stop = StopRule::OnActivation;
  int max_cycles = 5;
  double cycle_s = 60.0;
  bool monitoring = true;
  std::vector<std::size_t> targets;  ///< empty: every occupied site
  double threshold_sigma = 5.0;
  int min_dwell_bins = 25;
  /// SPAD counts per bin an activation must reach; 0 picks the TypeII/SnV midpoint.
  double activation_level = 0.0;
};

struct CampaignConfig {
  kinetics::ArraySpec array;
  std::vector<double> doses{10.0};
  std::vector<kinetics::AnnealSegment> segments;
  Calibration calibration;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "out";
  double acquisition_s = 1.0;
  unsigned threads = 1;
  ProtocolConfig protocol;
  std::string description;
};

const Json& campaign_schema();

/// Checks `doc` against a JSON-schema subset (type, properties, required,
/// additionalProperties, enum, bounds, items, $ref). Throws ConfigError with
/// the dotted location of the first violation.
void validate_schema(const Json& schema, const Json& doc, const std::string& root = "");

CampaignConfig campaign_from_json(const Json& j);
CampaignConfig parse_config(const std::filesystem::path& path);
/// Complete configuration with every default filled in.
Json to_json(const CampaignConfig& c);

}  // namespace snvkit::config
