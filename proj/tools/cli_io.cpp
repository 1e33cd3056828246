#include "cli_io.hpp"

#include <fstream>
#include <sstream>

#include "stmotion/errors.hpp"

namespace cli {

namespace {

std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  return hash == std::string::npos ? line : line.substr(0, hash);
}

std::ifstream open_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw stmotion::ConfigError("cannot open " + path);
  return in;
}

}  // namespace

motion::Skeleton read_skeleton_text(const std::string& path) {
  std::ifstream in = open_text(path);
  motion::Skeleton s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(strip_comment(line));
    std::string name;
    if (!(fields >> name)) continue;
    int parent = 0;
    std::array<double, 3> offset{};
    std::size_t mirror = 0;
    if (!(fields >> parent >> offset[0] >> offset[1] >> offset[2] >> mirror))
      throw stmotion::ConfigError(path + ":" + std::to_string(lineno) + ": expected `name parent ox oy oz mirror`");
    s.names.push_back(name);
    s.parent.push_back(parent);
    s.offset.push_back(offset);
    s.mirror.push_back(mirror);
  }
  if (s.names.empty()) throw stmotion::ConfigError(path + ": no joints");
  try {
    s.validate();
  } catch (const stmotion::ParameterError& e) {
    throw stmotion::ConfigError(path + ": " + e.what());
  }
  return s;
}

std::vector<motion::JointMotion> read_motion_spec(const std::string& path, const motion::Skeleton& skeleton) {
  std::ifstream in = open_text(path);
  std::vector<motion::JointMotion> spec(skeleton.joint_count());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(strip_comment(line));
    std::string joint;
    if (!(fields >> joint)) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    std::size_t index = skeleton.joint_count();
    for (std::size_t j = 0; j < skeleton.joint_count(); ++j)
      if (skeleton.names[j] == joint) index = j;
    if (index == skeleton.joint_count()) {
      try {
        std::size_t used = 0;
        index = std::stoul(joint, &used);
        if (used != joint.size()) index = skeleton.joint_count();
      } catch (const std::exception&) {
      }
    }
    if (index >= skeleton.joint_count()) throw stmotion::ConfigError(where + ": unknown joint '" + joint + "'");
    motion::JointMotion m;
    if (!(fields >> m.axis[0] >> m.axis[1] >> m.axis[2] >> m.amplitude >> m.frequency >> m.phase))
      throw stmotion::ConfigError(where + ": expected `joint ax ay az amplitude frequency phase`");
    spec[index] = m;
  }
  return spec;
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw stmotion::ConfigError("not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw stmotion::ConfigError("empty number list");
  return out;
}

std::vector<motion::MotionSequence> load_sequences(const std::string& paths) {
  std::vector<motion::MotionSequence> out;
  std::stringstream ss(paths);
  std::string path;
  while (std::getline(ss, path, ','))
    if (!path.empty()) out.push_back(motion::load_motion(path));
  if (out.empty()) throw stmotion::ConfigError("no motion files given");
  return out;
}

void split_tail(const std::vector<motion::MotionSequence>& seqs, double fraction,
                std::vector<motion::MotionSequence>& train, std::vector<motion::MotionSequence>& val) {
  for (const auto& s : seqs) {
    const auto tail = static_cast<std::size_t>(static_cast<double>(s.frames()) * fraction);
    if (tail == 0 || tail >= s.frames()) {
      train.push_back(s);
      continue;
    }
    train.push_back(s.slice(0, s.frames() - tail));
    val.push_back(s.slice(s.frames() - tail, tail));
  }
}

}  // namespace cli
