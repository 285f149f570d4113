#pragma once

// torch's logging header defines an aborting CHECK; doctest's must win.
#include <torch/torch.h>

#undef CHECK
#include <doctest.h>
