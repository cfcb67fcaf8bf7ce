#pragma once

#include "segpose/error.hpp"
#include "segpose/random.hpp"
#include "segpose/geometry.hpp"
#include "segpose/scene.hpp"
#include "segpose/grid.hpp"
#include "segpose/losses.hpp"
#include "segpose/fusion.hpp"
#include "segpose/pnp.hpp"
#include "segpose/simulator.hpp"
#include "segpose/evaluation.hpp"
#include "segpose/io.hpp"
#include "segpose/pipeline.hpp"
