#include <gtest/gtest.h>

#include "stmotion/runtime.hpp"

int main(int argc, char** argv) {
  stmotion::tune_allocator();
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
