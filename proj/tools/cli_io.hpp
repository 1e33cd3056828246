#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stmotion/motion.hpp"

namespace cli {

namespace motion = stmotion::motion;

/// Text skeleton: one joint per line, `name parent ox oy oz mirror`, with
/// parent -1 for roots and offsets in millimetres. `#` starts a comment.
motion::Skeleton read_skeleton_text(const std::string& path);

/// Text motion spec: one line per joint, `joint ax ay az amplitude frequency phase`,
/// where `joint` is a name or an index. Joints not listed stay still.
std::vector<motion::JointMotion> read_motion_spec(const std::string& path, const motion::Skeleton& skeleton);

/// Comma-separated list of numbers ("100,200,300").
std::vector<double> parse_number_list(const std::string& text);

/// Loads every STM1 file in a comma-separated list.
std::vector<motion::MotionSequence> load_sequences(const std::string& paths);

/// Splits each sequence into a leading training part and a trailing
/// validation part of `fraction` of its frames.
void split_tail(const std::vector<motion::MotionSequence>& seqs, double fraction,
                std::vector<motion::MotionSequence>& train, std::vector<motion::MotionSequence>& val);

}  // namespace cli
