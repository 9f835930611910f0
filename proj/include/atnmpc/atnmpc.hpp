#pragma once

// Umbrella header.

#include "atnmpc/controller.hpp"
#include "atnmpc/disturbance.hpp"
#include "atnmpc/drive_cycle.hpp"
#include "atnmpc/errors.hpp"
#include "atnmpc/estimators.hpp"
#include "atnmpc/interval_box.hpp"
#include "atnmpc/model.hpp"
#include "atnmpc/nmpc.hpp"
#include "atnmpc/plant.hpp"
#include "atnmpc/scenario.hpp"
#include "atnmpc/simulation.hpp"
#include "atnmpc/stabilizer.hpp"
#include "atnmpc/tube.hpp"
