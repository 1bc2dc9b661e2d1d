#pragma once

// Line-of-sight VLC channel and synthetic RSSI fingerprint generation.
//
// Transmitters face straight down, the photodiode faces straight up, so the
// irradiance and incidence angles coincide. RSSI is reported in dBm.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlctl/error.hpp"
#include "vlctl/random.hpp"
#include "vlctl/text.hpp"

namespace vlctl {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Transmitter {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

// One measurement scenario: an axis-aligned rectangle on the receiver plane.
struct Patch {
  int scenario_id = 0;
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;
  std::size_t target_points = 0;
};

struct RoomLayout {
  std::vector<Transmitter> transmitters;
  double rx_height = 1.1;
  double grid_spacing = 0.2;
  std::vector<Patch> patches;

  std::size_t feature_dim() const noexcept { return transmitters.size(); }
};

struct ChannelParams {
  double semi_angle_deg = 62.0;
  double pd_area = 1e-4;
  double fov_deg = 62.0;
  double tx_power_dbm = 10.0;
  double shadowing_sigma_db = 1.0;
  double measurement_noise_sigma_db = 0.25;
  double noise_floor_dbm = -95.0;
};

struct FingerprintRecord {
  int scenario_id = 0;
  Point2 position;
  std::vector<double> rssi;

  friend bool operator==(const FingerprintRecord&, const FingerprintRecord&) = default;
};

struct GridPoint {
  int scenario_id = 0;
  Point2 position;
};

// ============================================================================
// Validation
// ============================================================================

inline void validate(const ChannelParams& p) {
  if (!(p.semi_angle_deg > 0.0 && p.semi_angle_deg < 90.0))
    throw ConfigError("channel: semi_angle_deg must lie in (0, 90)");
  if (!(p.pd_area > 0.0)) throw ConfigError("channel: pd_area must be positive");
  if (!(p.fov_deg > 0.0 && p.fov_deg <= 90.0)) throw ConfigError("channel: fov_deg must lie in (0, 90]");
  if (!(p.shadowing_sigma_db >= 0.0) || !(p.measurement_noise_sigma_db >= 0.0))
    throw ConfigError("channel: noise sigmas must be non-negative");
  if (!std::isfinite(p.tx_power_dbm) || !std::isfinite(p.noise_floor_dbm))
    throw ConfigError("channel: tx_power_dbm and noise_floor_dbm must be finite");
}

inline void validate(const RoomLayout& layout) {
  if (layout.transmitters.empty()) throw ConfigError("layout: at least one transmitter is required");
  if (!(layout.grid_spacing > 0.0)) throw ConfigError("layout: grid_spacing must be positive");
  std::set<int> ids;
  for (const auto& tx : layout.transmitters) {
    if (!(tx.z > 0.0)) throw ConfigError("layout: transmitter " + std::to_string(tx.id) + " has z <= 0");
    if (!(layout.rx_height < tx.z))
      throw ConfigError("layout: rx_height must be below transmitter " + std::to_string(tx.id));
    if (!ids.insert(tx.id).second) throw ConfigError("layout: duplicate transmitter id " + std::to_string(tx.id));
  }
  for (const auto& p : layout.patches) {
    if (!(p.x_max > p.x_min) || !(p.y_max > p.y_min))
      throw ConfigError("layout: patch for scenario " + std::to_string(p.scenario_id) + " is empty or inverted");
  }
}

// ============================================================================
// Channel model
// ============================================================================

inline double lambertian_order(double semi_angle_deg) {
  if (!(semi_angle_deg > 0.0 && semi_angle_deg < 90.0))
    throw DomainError("lambertian_order: semi-angle must lie in (0, 90) degrees");
  const double c = std::cos(semi_angle_deg * std::numbers::pi / 180.0);
  return -std::log(2.0) / std::log(c);
}

// Linear DC gain of the line-of-sight link. Zero outside the receiver FOV.
inline double los_gain(const Transmitter& tx, Point2 rx, double rx_height, const ChannelParams& params) {
  const double dz = tx.z - rx_height;
  const double dx = tx.x - rx.x;
  const double dy = tx.y - rx.y;
  const double dist_sq = dx * dx + dy * dy + dz * dz;
  if (dist_sq == 0.0) throw DomainError("los_gain: transmitter and receiver coincide");
  if (!(dz > 0.0)) throw DomainError("los_gain: transmitter must be above the receiver plane");

  const double dist = std::sqrt(dist_sq);
  const double cos_angle = dz / dist;
  const double fov_cos = std::cos(params.fov_deg * std::numbers::pi / 180.0);
  if (cos_angle < fov_cos) return 0.0;

  const double m = lambertian_order(params.semi_angle_deg);
  return (m + 1.0) * params.pd_area / (2.0 * std::numbers::pi * dist_sq) * std::pow(cos_angle, m) * cos_angle;
}

inline double rssi_dbm(double tx_power_dbm, double gain, const ChannelParams& params, Rng& rng) {
  if (!(gain > 0.0)) return params.noise_floor_dbm;
  double v = tx_power_dbm + 10.0 * std::log10(gain);
  if (params.shadowing_sigma_db > 0.0) v += params.shadowing_sigma_db * rng.gaussian();
  if (params.measurement_noise_sigma_db > 0.0) v += params.measurement_noise_sigma_db * rng.gaussian();
  return v < params.noise_floor_dbm ? params.noise_floor_dbm : v;
}

// ============================================================================
// Grid and dataset synthesis
// ============================================================================

namespace detail {
// Tolerates the binary representation of decimal spacings (3.0 / 0.2 = 14.999...).
inline std::size_t lattice_steps(double extent, double spacing) {
  return static_cast<std::size_t>(std::floor(extent / spacing + 1e-9));
}
} // namespace detail

inline std::vector<GridPoint> generate_grid(const RoomLayout& layout) {
  if (!(layout.grid_spacing > 0.0)) throw ConfigError("layout: grid_spacing must be positive");
  std::vector<GridPoint> out;
  for (const auto& p : layout.patches) {
    const double w = p.x_max - p.x_min;
    const double h = p.y_max - p.y_min;
    const auto sx = detail::lattice_steps(w, layout.grid_spacing);
    const auto sy = detail::lattice_steps(h, layout.grid_spacing);
    if (sx == 0 || sy == 0)
      throw ConfigError("layout: patch for scenario " + std::to_string(p.scenario_id) +
                        " is smaller than one grid cell");
    const std::size_t count = (sx + 1) * (sy + 1);
    if (p.target_points > 0) {
      const double target = static_cast<double>(p.target_points);
      if (std::abs(static_cast<double>(count) - target) > 0.1 * target)
        throw ConfigError("layout: patch for scenario " + std::to_string(p.scenario_id) + " yields " +
                          std::to_string(count) + " points, more than 10% away from target " +
                          std::to_string(p.target_points));
    }
    for (std::size_t j = 0; j <= sy; ++j) {
      for (std::size_t i = 0; i <= sx; ++i) {
        out.push_back({p.scenario_id,
                       {p.x_min + static_cast<double>(i) * layout.grid_spacing,
                        p.y_min + static_cast<double>(j) * layout.grid_spacing}});
      }
    }
  }
  return out;
}

inline std::vector<FingerprintRecord> synthesize_dataset(const RoomLayout& layout, const ChannelParams& params,
                                                         std::uint64_t seed) {
  validate(layout);
  validate(params);
  Rng rng(seed);
  std::vector<FingerprintRecord> records;
  for (const auto& gp : generate_grid(layout)) {
    FingerprintRecord rec{gp.scenario_id, gp.position, {}};
    rec.rssi.reserve(layout.transmitters.size());
    for (const auto& tx : layout.transmitters) {
      const double gain = los_gain(tx, gp.position, layout.rx_height, params);
      rec.rssi.push_back(rssi_dbm(params.tx_power_dbm, gain, params, rng));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// ============================================================================
// Default layout
// ============================================================================

// Transmitter coordinates of the production-line deployment, receiver plane
// at 1.1 m and a 0.2 m measurement grid. Patches are 160-point rectangles
// near the transmitters each scenario covers; scenarios 1 and 2 both cover
// transmitters 1-3, scenarios 3-9 follow transmitters 4-10.
inline RoomLayout default_layout() {
  RoomLayout layout;
  layout.transmitters = {
      {1, 2.6, 0.8, 2.9},   {2, 1.7, -0.2, 2.9}, {3, 3.7, 1.8, 2.9},  {4, 17.1, 0.2, 2.9},
      {5, 12.9, 0.8, 2.9},  {6, 17.1, 0.8, 2.9}, {7, 14.2, 8.5, 2.9}, {8, 23.2, 4.6, 2.9},
      {9, 15.2, 4.6, 2.9},  {10, 13.5, 3.6, 2.9},
  };
  layout.rx_height = 1.1;
  layout.grid_spacing = 0.2;
  layout.patches = {
      {1, 1.0, 4.0, -0.6, 1.2, 160},   {2, 1.8, 4.8, 0.6, 2.4, 160},   {3, 15.6, 18.6, -1.0, 0.8, 160},
      {4, 11.4, 14.4, 0.0, 1.8, 160},  {5, 15.6, 18.6, 0.6, 2.4, 160}, {6, 13.2, 16.2, 5.6, 7.4, 160},
      {7, 19.9, 23.7, 3.9, 5.3, 160},  {8, 13.8, 16.8, 3.8, 5.6, 160}, {9, 12.0, 15.0, 2.2, 4.0, 160},
  };
  return layout;
}

// ============================================================================
// JSON
// ============================================================================

inline nlohmann::json to_json(const RoomLayout& layout) {
  nlohmann::json j;
  j["rx_height"] = layout.rx_height;
  j["grid_spacing"] = layout.grid_spacing;
  j["transmitters"] = nlohmann::json::array();
  for (const auto& tx : layout.transmitters)
    j["transmitters"].push_back({{"id", tx.id}, {"x", tx.x}, {"y", tx.y}, {"z", tx.z}});
  j["patches"] = nlohmann::json::array();
  for (const auto& p : layout.patches)
    j["patches"].push_back({{"scenario_id", p.scenario_id},
                            {"x_min", p.x_min},
                            {"x_max", p.x_max},
                            {"y_min", p.y_min},
                            {"y_max", p.y_max},
                            {"target_points", p.target_points}});
  return j;
}

namespace detail {
inline double json_number(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + "/" + key + ": missing");
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ParseError(where + "/" + key + ": expected a number");
  return v.get<double>();
}

inline std::int64_t json_integer(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + "/" + key + ": missing");
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ParseError(where + "/" + key + ": expected an integer");
  return v.get<std::int64_t>();
}
} // namespace detail

inline RoomLayout layout_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError(": layout must be a JSON object");
  RoomLayout layout;
  layout.rx_height = detail::json_number(j, "rx_height", "");
  layout.grid_spacing = detail::json_number(j, "grid_spacing", "");
  if (!j.contains("transmitters") || !j["transmitters"].is_array())
    throw ParseError("/transmitters: expected an array");
  for (std::size_t i = 0; i < j["transmitters"].size(); ++i) {
    const auto& t = j["transmitters"][i];
    const std::string where = "/transmitters/" + std::to_string(i);
    layout.transmitters.push_back({static_cast<int>(detail::json_integer(t, "id", where)),
                                   detail::json_number(t, "x", where), detail::json_number(t, "y", where),
                                   detail::json_number(t, "z", where)});
  }
  if (j.contains("patches")) {
    if (!j["patches"].is_array()) throw ParseError("/patches: expected an array");
    for (std::size_t i = 0; i < j["patches"].size(); ++i) {
      const auto& p = j["patches"][i];
      const std::string where = "/patches/" + std::to_string(i);
      const auto target = detail::json_integer(p, "target_points", where);
      if (target < 0) throw ParseError(where + "/target_points: must be non-negative");
      layout.patches.push_back({static_cast<int>(detail::json_integer(p, "scenario_id", where)),
                                detail::json_number(p, "x_min", where), detail::json_number(p, "x_max", where),
                                detail::json_number(p, "y_min", where), detail::json_number(p, "y_max", where),
                                static_cast<std::size_t>(target)});
    }
  }
  validate(layout);
  return layout;
}

inline RoomLayout load_layout(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("layout '" + path + "': " + e.what());
  }
  try {
    return layout_from_json(j);
  } catch (const ParseError& e) {
    throw ParseError("layout '" + path + "' " + e.what());
  }
}

inline nlohmann::json to_json(const ChannelParams& p) {
  return {{"semi_angle_deg", p.semi_angle_deg},
          {"pd_area_m2", p.pd_area},
          {"fov_deg", p.fov_deg},
          {"tx_power_dbm", p.tx_power_dbm},
          {"shadowing_sigma_db", p.shadowing_sigma_db},
          {"measurement_noise_sigma_db", p.measurement_noise_sigma_db},
          {"noise_floor_dbm", p.noise_floor_dbm}};
}

} // namespace vlctl
