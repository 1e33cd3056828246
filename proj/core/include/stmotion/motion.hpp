#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stmotion/so3.hpp"
#include "stmotion/tensor.hpp"

STMOTION_BEGIN_NAMESPACE
namespace motion {

inline constexpr std::size_t kJointDim = 9;  // row-major rotation matrix

/// Kinematic tree. Joints are topologically ordered (parent[i] < i) and
/// roots have parent -1. Offsets are in millimetres in the parent frame.
struct Skeleton {
  std::vector<std::string> names;
  std::vector<int> parent;
  std::vector<std::array<double, 3>> offset;
  std::vector<std::size_t> mirror;  // left/right partner, or self

  std::size_t joint_count() const { return names.size(); }

  /// Throws ParameterError if the invariants above or the mirror involution
  /// do not hold.
  void validate() const;

  /// 9-joint desk-scale skeleton: root, spine, head, left/right collar and
  /// arm, left/right leg. +x points to the body's left.
  static Skeleton desk();

  bool operator==(const Skeleton&) const = default;
};

/// T frames of N local joint rotations, stored as float row-major 3x3
/// matrices in a [T, N, 9] array.
class MotionSequence {
 public:
  MotionSequence(std::shared_ptr<const Skeleton> skeleton, double frame_rate, std::size_t frames,
                 std::vector<float> rotations);

  std::size_t frames() const { return frames_; }
  std::size_t joints() const { return skeleton_->joint_count(); }
  double frame_rate() const { return frame_rate_; }
  const Skeleton& skeleton() const { return *skeleton_; }
  const std::shared_ptr<const Skeleton>& skeleton_ptr() const { return skeleton_; }

  std::span<const float> values() const { return values_; }
  std::span<const float> frame(std::size_t t) const;
  so3::Mat3 rotation(std::size_t t, std::size_t joint) const;
  void set_rotation(std::size_t t, std::size_t joint, const so3::Mat3& r);

  /// Throws NumericError if any stored matrix is not a rotation within tol.
  void validate(double tol = 1e-5) const;

  /// Frames [start, start + length).
  MotionSequence slice(std::size_t start, std::size_t length) const;

 private:
  std::shared_ptr<const Skeleton> skeleton_;
  double frame_rate_;
  std::size_t frames_;
  std::vector<float> values_;
};

/// Joint positions [T, N] in millimetres.
struct PositionTrack {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::vector<std::array<double, 3>> xyz;

  const std::array<double, 3>& at(std::size_t t, std::size_t j) const { return xyz[t * joints + j]; }
};

/// Roots at the origin; p[j] = p[parent] + G[parent] offset[j] and
/// G[j] = G[parent] R[j].
PositionTrack forward_kinematics(const MotionSequence& seq);

/// FK for a single frame of N row-major rotations.
std::vector<std::array<double, 3>> forward_kinematics_frame(const Skeleton& skeleton,
                                                            std::span<const float> rotations);

/// Sinusoidal rotation of one joint about a fixed axis.
struct JointMotion {
  std::array<double, 3> axis{0, 0, 1};
  double amplitude = 0;  // radians
  double frequency = 0;  // Hz
  double phase = 0;      // radians
};

/// Joint n at frame t rotates by amplitude * sin(2 pi f t / fps + phase)
/// about its axis, perturbed by isotropic tangent-space Gaussian noise of
/// std noise_std radians and projected back onto SO(3).
MotionSequence synth_motion(std::shared_ptr<const Skeleton> skeleton, std::size_t frames, double frame_rate,
                            const std::vector<JointMotion>& spec, double noise_std, std::mt19937_64& rng);

/// Random per-joint sinusoids: a random unit axis, amplitude uniform in
/// [amplitude / 2, amplitude], random phase, and joint j moving at
/// frequencies[j % frequencies.size()].
std::vector<JointMotion> random_periodic_spec(std::size_t joints, const std::vector<double>& frequencies,
                                              double amplitude, std::mt19937_64& rng);

/// `count` sequences of `frames` frames, each with its own random periodic spec.
std::vector<MotionSequence> periodic_dataset(std::shared_ptr<const Skeleton> skeleton, std::size_t count,
                                             std::size_t frames, double frame_rate,
                                             const std::vector<double>& frequencies, double amplitude,
                                             double noise_std, std::uint64_t seed);

/// Windows of `length` frames every `stride` frames. Empty if length > T.
std::vector<MotionSequence> window(const MotionSequence& seq, std::size_t length, std::size_t stride);

MotionSequence augment_reverse(const MotionSequence& seq);

/// Swaps each joint with its mirror partner and conjugates by the sagittal
/// reflection S = diag(-1, 1, 1).
MotionSequence augment_mirror(const MotionSequence& seq);

/// Input/target pairs for next-frame prediction, both [B, T-1, N, 9].
struct WindowedBatch {
  nd::Tensor inputs;
  nd::Tensor targets;
};

WindowedBatch shift_targets(std::span<const MotionSequence> windows);

/// [B, T, N, 9] tensor of the given equal-length sequences.
nd::Tensor to_tensor(std::span<const MotionSequence> seqs);

// STM1 motion file: "STM1", f32 frame rate, u32 T, u32 N, then per joint
// (u32 name length, name, i32 parent, 3 x f32 offset, u32 mirror), then
// T*N*9 f32 rotations. Little-endian.
void write_motion(std::ostream& out, const MotionSequence& seq);
MotionSequence read_motion(std::istream& in);
void save_motion(const std::string& path, const MotionSequence& seq);
MotionSequence load_motion(const std::string& path);

/// CSV with header `frame,joint,x,y,z`.
void write_positions_csv(std::ostream& out, const PositionTrack& positions);

}  // namespace motion
STMOTION_END_NAMESPACE
