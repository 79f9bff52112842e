#pragma once

#include <torch/torch.h>

// libtorch defines a CHECK macro of its own; the test one must win.
#undef CHECK
#include "doctest.h"
