#pragma once

// Everything except the io layer, which needs libpng, CLI11 and nlohmann/json.

#include "panogs/core/error.hpp"
#include "panogs/core/image.hpp"
#include "panogs/core/math.hpp"
#include "panogs/core/memory.hpp"
#include "panogs/cost_volume.hpp"
#include "panogs/cubemap.hpp"
#include "panogs/deferred.hpp"
#include "panogs/depth.hpp"
#include "panogs/gaussian.hpp"
#include "panogs/geometry.hpp"
#include "panogs/metrics.hpp"
#include "panogs/renderer.hpp"
#include "panogs/synth.hpp"
#include "panogs/tiling.hpp"
#include "panogs/verify.hpp"
