#include "microclip/atrgen.hpp"
