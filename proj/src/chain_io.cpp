#include "avsim/chain_io.hpp"

#include <fstream>
#include <stdexcept>

#include <zlib.h>

#include "avsim/error.hpp"

namespace avsim {

nlohmann::json chain_to_json(const KinematicChain& chain) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& j : chain.joints) {
    joints.push_back({{"name", j.name},
                      {"offset", to_json(j.parent_offset)},
                      {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
                      {"limits", {j.limit_lo, j.limit_hi}},
                      {"center", j.center}});
  }
  nlohmann::json out = {{"name", chain.name},
                        {"base_pose", to_json(chain.base_pose)},
                        {"joints", joints},
                        {"tool_offset", to_json(chain.tool_offset)}};
  if (chain.home.size() > 0) {
    out["home"] = std::vector<double>(chain.home.data(), chain.home.data() + chain.home.size());
  }
  return out;
}

KinematicChain chain_from_json(const nlohmann::json& j) {
  KinematicChain chain;
  chain.name = j.at("name").get<std::string>();
  chain.base_pose = j.contains("base_pose") ? pose_from_json(j.at("base_pose")) : Pose();
  chain.tool_offset = j.contains("tool_offset") ? pose_from_json(j.at("tool_offset")) : Pose();
  for (const auto& jj : j.at("joints")) {
    Joint joint;
    joint.name = jj.value("name", std::string{});
    joint.parent_offset = jj.contains("offset") ? pose_from_json(jj.at("offset")) : Pose();
    const auto& axis = jj.at("axis");
    joint.axis = Vec3(axis.at(0).get<double>(), axis.at(1).get<double>(), axis.at(2).get<double>());
    const auto& limits = jj.at("limits");
    joint.limit_lo = limits.at(0).get<double>();
    joint.limit_hi = limits.at(1).get<double>();
    joint.center = jj.contains("center") ? jj.at("center").get<double>()
                                         : 0.5 * (joint.limit_lo + joint.limit_hi);
    chain.joints.push_back(joint);
  }
  if (j.contains("home")) {
    const auto home = j.at("home").get<std::vector<double>>();
    chain.home = Eigen::Map<const JointState>(home.data(), static_cast<Eigen::Index>(home.size()));
  }
  chain.validate();
  return chain;
}

KinematicChain load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open chain description " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    return chain_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw UserError("malformed chain description " + path.string() + ": " + e.what());
  }
}

void save_chain(const std::filesystem::path& path, const KinematicChain& chain) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write chain description " + path.string());
  out << chain_to_json(chain).dump(2) << "\n";
}

std::uint32_t chain_checksum(const KinematicChain& chain) {
  const std::string text = chain_to_json(chain).dump();
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size())));
}

}  // namespace avsim
