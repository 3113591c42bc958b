#pragma once

// libtorch's logging header defines glog-style CHECK macros that abort the
// process. Pull it in first, drop those, and let doctest's assertions win.
#include <torch/torch.h>

#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE

#include <doctest.h>
