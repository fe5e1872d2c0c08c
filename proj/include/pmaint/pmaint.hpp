#pragma once

#include "pmaint/error.hpp"
#include "pmaint/random.hpp"
#include "pmaint/telemetry.hpp"
#include "pmaint/lof.hpp"
#include "pmaint/classifier.hpp"
#include "pmaint/message_bus.hpp"
#include "pmaint/edge_gateway.hpp"
#include "pmaint/event_store.hpp"
#include "pmaint/cloud_analyzer.hpp"
#include "pmaint/backend_coord.hpp"
#include "pmaint/scenario.hpp"
#include "pmaint/simulation.hpp"
#include "pmaint/fleet.hpp"
