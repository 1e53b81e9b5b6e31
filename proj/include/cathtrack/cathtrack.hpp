#pragma once

// Everything except the network layer (server.hpp, ws_client.hpp), which
// pulls in Boost.Beast.

#include "cathtrack/beam_targets.hpp"
#include "cathtrack/bench.hpp"
#include "cathtrack/camera.hpp"
#include "cathtrack/catheter.hpp"
#include "cathtrack/errors.hpp"
#include "cathtrack/frame_synth.hpp"
#include "cathtrack/fusion.hpp"
#include "cathtrack/geometry.hpp"
#include "cathtrack/image.hpp"
#include "cathtrack/protocol.hpp"
#include "cathtrack/registration.hpp"
#include "cathtrack/roll_encoder.hpp"
#include "cathtrack/track_report.hpp"
#include "cathtrack/twin.hpp"
#include "cathtrack/vision.hpp"
#include "cathtrack/workload.hpp"
