#include "microclip/experiments.hpp"
