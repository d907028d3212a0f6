#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace oransfc {

using NodeId = std::int32_t;
using LinkId = std::int32_t;

inline constexpr NodeId kNoNode = -1;
inline constexpr int kUnreachable = -1;

// Node roles, stored as a bitmask.
enum Role : std::uint8_t {
  kRoleRU = 1U << 0,
  kRoleDU = 1U << 1,
  kRoleCU = 1U << 2,
  kRoleUPF = 1U << 3,
  kRoleTransport = 1U << 4,
};
using RoleSet = std::uint8_t;

inline constexpr std::array<std::pair<Role, std::string_view>, 5> kRoleNames{{
    {kRoleRU, "RU"},
    {kRoleDU, "DU"},
    {kRoleCU, "CU"},
    {kRoleUPF, "UPF"},
    {kRoleTransport, "TRANSPORT"},
}};

inline std::optional<Role> parse_role(std::string_view s) {
  for (auto [r, name] : kRoleNames)
    if (name == s) return r;
  return std::nullopt;
}

enum class Service : std::uint8_t { CG = 0, AR, VoIP, VS, MIoT, I40 };
inline constexpr int kNumServices = 6;
inline constexpr std::array<std::string_view, kNumServices> kServiceNames{
    "CG", "AR", "VoIP", "VS", "MIoT", "I40"};

inline std::string_view service_name(Service s) {
  return kServiceNames[static_cast<int>(s)];
}

inline std::optional<Service> parse_service(std::string_view s) {
  for (int i = 0; i < kNumServices; ++i)
    if (kServiceNames[i] == s) return static_cast<Service>(i);
  return std::nullopt;
}

enum class Direction : std::uint8_t { Uplink, Downlink };

inline std::string_view direction_name(Direction d) {
  return d == Direction::Uplink ? "UPLINK" : "DOWNLINK";
}

inline std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "UPLINK") return Direction::Uplink;
  if (s == "DOWNLINK") return Direction::Downlink;
  return std::nullopt;
}

// Fixed-point resource units. Ledger arithmetic is integral so that commit
// followed by release restores every counter bit-exactly.
inline constexpr double kBwUnitsPerMbps = 1000.0;  // 1 unit = 1 kbps
inline constexpr double kCpuUnitsPerCu = 1e6;      // 1 unit = 1e-6 compute-unit

inline std::int64_t bw_units(double mbps) { return std::llround(mbps * kBwUnitsPerMbps); }
inline std::int64_t cpu_units(double cu) { return std::llround(cu * kCpuUnitsPerCu); }
inline double bw_mbps(std::int64_t units) { return static_cast<double>(units) / kBwUnitsPerMbps; }
inline double cpu_value(std::int64_t units) { return static_cast<double>(units) / kCpuUnitsPerCu; }

/// Snap a bandwidth to the ledger's resolution.
inline double quantize_mbps(double mbps) { return bw_mbps(bw_units(mbps)); }
inline double quantize_cpu(double cu) { return cpu_value(cpu_units(cu)); }

}  // namespace oransfc
