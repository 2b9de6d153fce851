#include "microclip/contrastive.hpp"
