#pragma once

#include "stmotion/precision.hpp"

STMOTION_BEGIN_NAMESPACE

/// Keeps large tensor buffers on the heap between training steps instead of
/// returning them to the OS after every free. Process-wide; call once from main.
void tune_allocator();

STMOTION_END_NAMESPACE
