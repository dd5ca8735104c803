#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "avsim/kinematics.hpp"

namespace avsim {

// Chain-description JSON (lengths in meters, angles in radians, quaternions w,x,y,z):
//
//   {
//     "name": "left",
//     "base_pose":   {"translation": [x,y,z], "rotation": [w,x,y,z]},
//     "joints": [
//       {"name": "waist", "offset": <pose>, "axis": [0,0,1],
//        "limits": [lo, hi], "center": c}            // center optional
//     ],
//     "tool_offset": <pose>,
//     "home": [q0, q1, ...]                           // optional
//   }
nlohmann::json chain_to_json(const KinematicChain& chain);
KinematicChain chain_from_json(const nlohmann::json& j);

KinematicChain load_chain(const std::filesystem::path& path);
void save_chain(const std::filesystem::path& path, const KinematicChain& chain);

// CRC-32 of the canonical JSON serialization.
std::uint32_t chain_checksum(const KinematicChain& chain);

}  // namespace avsim
