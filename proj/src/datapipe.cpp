#include "microclip/datapipe.hpp"
