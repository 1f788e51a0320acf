#pragma once

#include "canshape/error.hpp"
#include "canshape/rng.hpp"
#include "canshape/can_codec.hpp"
#include "canshape/signal_pipeline.hpp"
#include "canshape/kmeans.hpp"
#include "canshape/cocluster.hpp"
#include "canshape/diffusion.hpp"
#include "canshape/kdtree.hpp"
#include "canshape/detect.hpp"
#include "canshape/simulate.hpp"
#include "canshape/io.hpp"
