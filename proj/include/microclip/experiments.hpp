#pragma once

#include "microclip/common.hpp"

namespace microclip::experiments {
}
