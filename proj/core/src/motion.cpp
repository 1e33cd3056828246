#include "stmotion/motion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

#include "stmotion/tensor_io.hpp"

STMOTION_BEGIN_NAMESPACE
namespace motion {

namespace {

constexpr char kMotionMagic[4] = {'S', 'T', 'M', '1'};

so3::Mat3 to_mat(std::span<const float> v) {
  so3::Mat3 m{};
  for (std::size_t i = 0; i < 9; ++i) m[i] = v[i];
  return m;
}

// S R S with S = diag(-1, 1, 1): negates entries (0,1), (0,2), (1,0), (2,0).
void reflect_sagittal(std::span<float> m) {
  m[1] = -m[1];
  m[2] = -m[2];
  m[3] = -m[3];
  m[6] = -m[6];
}

}  // namespace

void Skeleton::validate() const {
  const std::size_t n = names.size();
  if (n == 0) throw ParameterError("skeleton has no joints");
  if (parent.size() != n || offset.size() != n || mirror.size() != n)
    throw ParameterError("skeleton field lengths disagree");
  for (std::size_t i = 0; i < n; ++i) {
    if (parent[i] < -1 || parent[i] >= static_cast<int>(i))
      throw ParameterError("joint " + names[i] + " is not topologically ordered");
    if (mirror[i] >= n || mirror[mirror[i]] != i)
      throw ParameterError("mirror pairing is not an involution at joint " + names[i]);
  }
}

Skeleton Skeleton::desk() {
  Skeleton s;
  s.names = {"root", "spine", "head", "l_collar", "l_arm", "r_collar", "r_arm", "l_leg", "r_leg"};
  s.parent = {-1, 0, 1, 1, 3, 1, 5, 0, 0};
  s.offset = {{{0, 0, 0}},      {{0, 250, 0}}, {{0, 250, 0}},  {{150, 200, 0}},  {{250, 0, 0}},
              {{-150, 200, 0}}, {{-250, 0, 0}}, {{100, -450, 0}}, {{-100, -450, 0}}};
  s.mirror = {0, 1, 2, 5, 6, 3, 4, 8, 7};
  return s;
}

MotionSequence::MotionSequence(std::shared_ptr<const Skeleton> skeleton, double frame_rate, std::size_t frames,
                               std::vector<float> rotations)
    : skeleton_(std::move(skeleton)), frame_rate_(frame_rate), frames_(frames), values_(std::move(rotations)) {
  if (!skeleton_) throw ParameterError("motion sequence needs a skeleton");
  if (frames_ == 0) throw ParameterError("motion sequence needs at least one frame");
  if (!(frame_rate_ > 0)) throw ParameterError("frame rate must be positive");
  if (values_.size() != frames_ * joints() * kJointDim)
    throw ShapeError("rotation array length does not match T x N x 9");
}

std::span<const float> MotionSequence::frame(std::size_t t) const {
  const std::size_t stride = joints() * kJointDim;
  return std::span<const float>(values_).subspan(t * stride, stride);
}

so3::Mat3 MotionSequence::rotation(std::size_t t, std::size_t joint) const {
  return to_mat(std::span<const float>(values_).subspan((t * joints() + joint) * kJointDim, kJointDim));
}

void MotionSequence::set_rotation(std::size_t t, std::size_t joint, const so3::Mat3& r) {
  float* dst = values_.data() + (t * joints() + joint) * kJointDim;
  for (std::size_t i = 0; i < 9; ++i) dst[i] = static_cast<float>(r[i]);
}

void MotionSequence::validate(double tol) const {
  for (std::size_t t = 0; t < frames_; ++t)
    for (std::size_t j = 0; j < joints(); ++j)
      if (!so3::is_rotation(rotation(t, j), tol))
        throw NumericError("frame " + std::to_string(t) + " joint " + std::to_string(j) + " is not a rotation");
}

MotionSequence MotionSequence::slice(std::size_t start, std::size_t length) const {
  if (length == 0 || start + length > frames_) throw ParameterError("slice out of range");
  const std::size_t stride = joints() * kJointDim;
  std::vector<float> values(values_.begin() + static_cast<std::ptrdiff_t>(start * stride),
                            values_.begin() + static_cast<std::ptrdiff_t>((start + length) * stride));
  return MotionSequence(skeleton_, frame_rate_, length, std::move(values));
}

std::vector<std::array<double, 3>> forward_kinematics_frame(const Skeleton& skeleton,
                                                            std::span<const float> rotations) {
  const std::size_t n = skeleton.joint_count();
  if (rotations.size() != n * kJointDim) throw ShapeError("forward_kinematics: frame size mismatch");
  std::vector<so3::Mat3> global(n);
  std::vector<std::array<double, 3>> pos(n);
  for (std::size_t j = 0; j < n; ++j) {
    const so3::Mat3 local = to_mat(rotations.subspan(j * kJointDim, kJointDim));
    const int p = skeleton.parent[j];
    if (p < 0) {
      global[j] = local;
      pos[j] = {0, 0, 0};
      continue;
    }
    const auto& g = global[static_cast<std::size_t>(p)];
    const auto& o = skeleton.offset[j];
    const auto& base = pos[static_cast<std::size_t>(p)];
    for (int r = 0; r < 3; ++r)
      pos[j][static_cast<std::size_t>(r)] =
          base[static_cast<std::size_t>(r)] + g[static_cast<std::size_t>(r * 3)] * o[0] +
          g[static_cast<std::size_t>(r * 3 + 1)] * o[1] + g[static_cast<std::size_t>(r * 3 + 2)] * o[2];
    global[j] = so3::multiply(g, local);
  }
  return pos;
}

PositionTrack forward_kinematics(const MotionSequence& seq) {
  PositionTrack track;
  track.frames = seq.frames();
  track.joints = seq.joints();
  track.xyz.reserve(track.frames * track.joints);
  for (std::size_t t = 0; t < seq.frames(); ++t) {
    auto frame = forward_kinematics_frame(seq.skeleton(), seq.frame(t));
    track.xyz.insert(track.xyz.end(), frame.begin(), frame.end());
  }
  return track;
}

MotionSequence synth_motion(std::shared_ptr<const Skeleton> skeleton, std::size_t frames, double frame_rate,
                            const std::vector<JointMotion>& spec, double noise_std, std::mt19937_64& rng) {
  if (!skeleton) throw ParameterError("synth_motion: missing skeleton");
  const std::size_t n = skeleton->joint_count();
  if (spec.size() != n)
    throw ParameterError("synth_motion: expected " + std::to_string(n) + " joint specs, got " +
                         std::to_string(spec.size()));
  if (frames == 0) throw ParameterError("synth_motion: frame count must be positive");
  if (!(frame_rate > 0)) throw ParameterError("synth_motion: frame rate must be positive");
  if (!(noise_std >= 0)) throw ParameterError("synth_motion: noise std must be non-negative");
  for (const auto& js : spec) {
    if (!(std::abs(js.amplitude) < so3::kPi)) throw ParameterError("synth_motion: amplitude must be below pi");
    if (!(js.frequency >= 0)) throw ParameterError("synth_motion: frequency must be non-negative");
    if (js.frequency >= frame_rate / 2.0)
      throw ParameterError("synth_motion: frequency " + std::to_string(js.frequency) +
                           " Hz aliases at " + std::to_string(frame_rate) + " fps");
    if (js.amplitude != 0 && js.axis[0] == 0 && js.axis[1] == 0 && js.axis[2] == 0)
      throw ParameterError("synth_motion: zero rotation axis");
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<float> values(frames * n * kJointDim);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < n; ++j) {
      const auto& js = spec[j];
      const double angle =
          js.amplitude * std::sin(2.0 * so3::kPi * js.frequency * static_cast<double>(t) / frame_rate + js.phase);
      so3::Mat3 r = so3::rot_axis(js.axis, angle);
      if (noise_std > 0) {
        const so3::AngleAxis eps{noise_std * gauss(rng), noise_std * gauss(rng), noise_std * gauss(rng)};
        r = so3::project_to_so3(so3::multiply(r, so3::rotmat_from_angleaxis(eps)));
      }
      float* dst = values.data() + (t * n + j) * kJointDim;
      for (std::size_t i = 0; i < 9; ++i) dst[i] = static_cast<float>(r[i]);
    }
  return MotionSequence(std::move(skeleton), frame_rate, frames, std::move(values));
}

std::vector<JointMotion> random_periodic_spec(std::size_t joints, const std::vector<double>& frequencies,
                                              double amplitude, std::mt19937_64& rng) {
  if (frequencies.empty()) throw ParameterError("random_periodic_spec: no frequencies");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> amp(amplitude / 2, amplitude), phase(0.0, 2.0 * so3::kPi);
  std::vector<JointMotion> spec(joints);
  for (std::size_t j = 0; j < joints; ++j) {
    std::array<double, 3> axis{};
    double norm = 0;
    while (norm < 1e-6) {
      axis = {gauss(rng), gauss(rng), gauss(rng)};
      norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    }
    for (double& a : axis) a /= norm;
    spec[j].axis = axis;
    spec[j].amplitude = amp(rng);
    spec[j].frequency = frequencies[j % frequencies.size()];
    spec[j].phase = phase(rng);
  }
  return spec;
}

std::vector<MotionSequence> periodic_dataset(std::shared_ptr<const Skeleton> skeleton, std::size_t count,
                                             std::size_t frames, double frame_rate,
                                             const std::vector<double>& frequencies, double amplitude,
                                             double noise_std, std::uint64_t seed) {
  if (!skeleton) throw ParameterError("periodic_dataset: missing skeleton");
  std::mt19937_64 rng(seed);
  std::vector<MotionSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto spec = random_periodic_spec(skeleton->joint_count(), frequencies, amplitude, rng);
    out.push_back(synth_motion(skeleton, frames, frame_rate, spec, noise_std, rng));
  }
  return out;
}

std::vector<MotionSequence> window(const MotionSequence& seq, std::size_t length, std::size_t stride) {
  if (length == 0 || stride == 0) throw ParameterError("window: length and stride must be positive");
  std::vector<MotionSequence> out;
  if (length > seq.frames()) return out;
  for (std::size_t start = 0; start + length <= seq.frames(); start += stride) out.push_back(seq.slice(start, length));
  return out;
}

MotionSequence augment_reverse(const MotionSequence& seq) {
  const std::size_t stride = seq.joints() * kJointDim;
  std::vector<float> values(seq.values().size());
  for (std::size_t t = 0; t < seq.frames(); ++t) {
    auto src = seq.frame(seq.frames() - 1 - t);
    std::copy(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(t * stride));
  }
  return MotionSequence(seq.skeleton_ptr(), seq.frame_rate(), seq.frames(), std::move(values));
}

MotionSequence augment_mirror(const MotionSequence& seq) {
  const auto& skel = seq.skeleton();
  const std::size_t n = seq.joints();
  std::vector<float> values(seq.values().size());
  for (std::size_t t = 0; t < seq.frames(); ++t)
    for (std::size_t j = 0; j < n; ++j) {
      auto src = seq.values().subspan((t * n + skel.mirror[j]) * kJointDim, kJointDim);
      std::span<float> dst(values.data() + (t * n + j) * kJointDim, kJointDim);
      std::copy(src.begin(), src.end(), dst.begin());
      reflect_sagittal(dst);
    }
  return MotionSequence(seq.skeleton_ptr(), seq.frame_rate(), seq.frames(), std::move(values));
}

nd::Tensor to_tensor(std::span<const MotionSequence> seqs) {
  if (seqs.empty()) throw ParameterError("to_tensor: no sequences");
  const std::size_t t_len = seqs.front().frames();
  const std::size_t n = seqs.front().joints();
  std::vector<Real> data;
  data.reserve(seqs.size() * t_len * n * kJointDim);
  for (const auto& s : seqs) {
    if (s.frames() != t_len || s.joints() != n) throw ShapeError("to_tensor: sequences differ in shape");
    for (float v : s.values()) data.push_back(static_cast<Real>(v));
  }
  return nd::Tensor({seqs.size(), t_len, n, kJointDim}, std::move(data));
}

WindowedBatch shift_targets(std::span<const MotionSequence> windows) {
  if (windows.empty()) throw ParameterError("shift_targets: no windows");
  const std::size_t t_len = windows.front().frames();
  if (t_len < 2) throw ParameterError("shift_targets: windows need at least 2 frames");
  const std::size_t n = windows.front().joints();
  const std::size_t stride = n * kJointDim;
  std::vector<Real> in, tgt;
  in.reserve(windows.size() * (t_len - 1) * stride);
  tgt.reserve(in.capacity());
  for (const auto& w : windows) {
    if (w.frames() != t_len || w.joints() != n) throw ShapeError("shift_targets: windows differ in shape");
    auto v = w.values();
    for (std::size_t i = 0; i < (t_len - 1) * stride; ++i) in.push_back(static_cast<Real>(v[i]));
    for (std::size_t i = stride; i < t_len * stride; ++i) tgt.push_back(static_cast<Real>(v[i]));
  }
  const nd::Shape shape{windows.size(), t_len - 1, n, kJointDim};
  return {nd::Tensor(shape, std::move(in)), nd::Tensor(shape, std::move(tgt))};
}

void write_motion(std::ostream& out, const MotionSequence& seq) {
  namespace le = nd::le;
  out.write(kMotionMagic, 4);
  le::put_f32(out, static_cast<float>(seq.frame_rate()));
  le::put_u32(out, static_cast<std::uint32_t>(seq.frames()));
  le::put_u32(out, static_cast<std::uint32_t>(seq.joints()));
  const auto& s = seq.skeleton();
  for (std::size_t j = 0; j < s.joint_count(); ++j) {
    le::put_u32(out, static_cast<std::uint32_t>(s.names[j].size()));
    out.write(s.names[j].data(), static_cast<std::streamsize>(s.names[j].size()));
    le::put_i32(out, s.parent[j]);
    for (double o : s.offset[j]) le::put_f32(out, static_cast<float>(o));
    le::put_u32(out, static_cast<std::uint32_t>(s.mirror[j]));
  }
  for (float v : seq.values()) le::put_f32(out, v);
  if (!out) throw FormatError("failed to write motion file");
}

MotionSequence read_motion(std::istream& in) {
  namespace le = nd::le;
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMotionMagic)) throw FormatError("not an STM1 motion file");
  const float fps = le::get_f32(in);
  const std::uint32_t frames = le::get_u32(in);
  const std::uint32_t n = le::get_u32(in);
  if (n == 0 || n > 4096) throw FormatError("implausible joint count");
  if (frames == 0) throw FormatError("motion file has no frames");
  auto skel = std::make_shared<Skeleton>();
  for (std::uint32_t j = 0; j < n; ++j) {
    const std::uint32_t len = le::get_u32(in);
    if (len > 4096) throw FormatError("implausible joint name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (static_cast<std::uint32_t>(in.gcount()) != len) throw FormatError("truncated joint name");
    skel->names.push_back(std::move(name));
    skel->parent.push_back(le::get_i32(in));
    std::array<double, 3> off{};
    for (double& o : off) o = le::get_f32(in);
    skel->offset.push_back(off);
    skel->mirror.push_back(le::get_u32(in));
  }
  try {
    skel->validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("invalid skeleton block: ") + e.what());
  }
  std::vector<float> values(static_cast<std::size_t>(frames) * n * kJointDim);
  for (float& v : values) v = le::get_f32(in);
  return MotionSequence(std::move(skel), fps, frames, std::move(values));
}

void save_motion(const std::string& path, const MotionSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_motion(out, seq);
}

MotionSequence load_motion(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_motion(in);
}

void write_positions_csv(std::ostream& out, const PositionTrack& positions) {
  out << "frame,joint,x,y,z\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t t = 0; t < positions.frames; ++t)
    for (std::size_t j = 0; j < positions.joints; ++j) {
      const auto& p = positions.at(t, j);
      out << t << ',' << j << ',' << p[0] << ',' << p[1] << ',' << p[2] << '\n';
    }
}

}  // namespace motion
STMOTION_END_NAMESPACE
