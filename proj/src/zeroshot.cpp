#include "microclip/zeroshot.hpp"
