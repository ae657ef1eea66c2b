#pragma once

#include "jstirso/errors.hpp"
#include "jstirso/model.hpp"
#include "jstirso/losses.hpp"
#include "jstirso/optimizer.hpp"
#include "jstirso/analysis.hpp"
#include "jstirso/testkit.hpp"
#include "jstirso/config.hpp"
#include "jstirso/experiment.hpp"
