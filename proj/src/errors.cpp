#include "realdesc/errors.hpp"
