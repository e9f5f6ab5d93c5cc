#pragma once

#include "error.hpp"
#include "frame_codec.hpp"
#include "frame_file.hpp"
#include "geometry.hpp"
#include "geometry_io.hpp"
#include "polyfit.hpp"
#include "pose.hpp"
#include "prediction.hpp"
#include "pubsub.hpp"
#include "reqrep.hpp"
#include "simulator.hpp"
#include "station.hpp"
#include "track_io.hpp"
#include "tracking.hpp"
