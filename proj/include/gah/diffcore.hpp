#pragma once

#include "gah/diffcore/array.hpp"
#include "gah/diffcore/grad_check.hpp"
#include "gah/diffcore/ops.hpp"
