#include "microclip/encoders.hpp"
