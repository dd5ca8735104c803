#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "avsim/camera.hpp"
#include "avsim/kinematics.hpp"
#include "avsim/rig.hpp"
#include "avsim/sim.hpp"
#include "avsim/wire.hpp"

namespace avsim::test {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
bool same_bytes(const std::filesystem::path& a, const std::filesystem::path& b);

// Uniform inside the joint limits.
JointState random_q(const KinematicChain& chain, std::mt19937_64& rng);
// q plus a random offset of norm at most `radius`, clamped to the limits.
JointState random_q_near(const KinematicChain& chain, const JointState& q, double radius, std::mt19937_64& rng);

// Tool pose as a plain product of homogeneous matrices.
Eigen::Matrix4d fk_matrix(const KinematicChain& chain, const JointState& q);

// Central differences of the tool position, and of the rotation through
// log(R(q + h) R(q - h)^T) / 2h.
Eigen::Matrix<double, 6, Eigen::Dynamic> numeric_jacobian(const KinematicChain& chain, const JointState& q,
                                                          double h = 1e-6);

// Bitwise reflected CRC-32 (polynomial 0xEDB88320).
std::uint32_t crc32_bitwise(const std::uint8_t* data, std::size_t n);

// Renders a lone sphere on the left AV camera's optical axis at depth z and
// returns the difference of silhouette centroids (left u minus right u).
struct DisparitySample {
  double depth = 0.0;
  double expected = 0.0;
  double measured = 0.0;
  int left_pixels = 0;
  int right_pixels = 0;
};
DisparitySample measure_disparity(const Rig& rig, const CameraRig& cameras, double z);

// Frame of camera `id` rendered from a scene with every AV-arm primitive removed.
Frame render_without_av_arm(const SimState& state, const Rig& rig, const CameraRig& cameras, CameraId id);
// Number of pixels in camera `id` whose visible primitive belongs to the AV arm.
int av_arm_pixels(const SimState& state, const Rig& rig, const CameraRig& cameras, CameraId id);

// Random valid message of the given type (finite floats, unit quaternions).
wire::Message random_message(wire::MsgType type, std::mt19937_64& rng);

struct FuzzResult {
  std::uint64_t frames = 0;
  std::uint64_t decoded = 0;  // mutated frames that still decoded to a message
  std::uint64_t rejected = 0;
  std::uint64_t binary_reencode_mismatches = 0;  // decoded binary messages that re-encode differently
};

// Feeds `frames` mutated encodings (bit flips, truncation, extension, random
// bytes, length tampering) through decode() and a StreamDecoder.
FuzzResult fuzz_codec(std::uint64_t frames, std::uint64_t seed);

}  // namespace avsim::test
