#pragma once

// Scalar type selection. The library is normally built with 32-bit floats.
// Defining STMOTION_DOUBLE builds an otherwise identical copy in double
// precision; it lives in a distinct inline namespace so both variants can be
// linked into the same executable (used by the gradient-check oracle).

#ifdef STMOTION_DOUBLE
#define STMOTION_ABI f64
#else
#define STMOTION_ABI f32
#endif

#define STMOTION_BEGIN_NAMESPACE  \
  namespace stmotion {            \
  inline namespace STMOTION_ABI {
#define STMOTION_END_NAMESPACE \
  }                            \
  }

STMOTION_BEGIN_NAMESPACE
#ifdef STMOTION_DOUBLE
using Real = double;
#else
using Real = float;
#endif
STMOTION_END_NAMESPACE
