#pragma once

#include <ssbd/core.hpp>
#include <ssbd/experiments.hpp>
#include <ssbd/io.hpp>
#include <ssbd/landscape.hpp>
#include <ssbd/optimizer.hpp>
#include <ssbd/pipeline.hpp>
#include <ssbd/rng.hpp>
#include <ssbd/shift_model.hpp>
#include <ssbd/signals.hpp>
