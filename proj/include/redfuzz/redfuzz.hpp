#pragma once

// Umbrella header for the library. The HTTP transport is not pulled in here;
// include redfuzz/gateway_http.hpp in binaries that talk to remote endpoints.

#include "redfuzz/agents.hpp"
#include "redfuzz/campaign.hpp"
#include "redfuzz/config.hpp"
#include "redfuzz/core.hpp"
#include "redfuzz/dataset.hpp"
#include "redfuzz/defense.hpp"
#include "redfuzz/embedding.hpp"
#include "redfuzz/fuzzer.hpp"
#include "redfuzz/gateway.hpp"
#include "redfuzz/knowledge.hpp"
#include "redfuzz/logging.hpp"
#include "redfuzz/parsing.hpp"
#include "redfuzz/rng.hpp"
#include "redfuzz/session.hpp"
#include "redfuzz/templates.hpp"
#include "redfuzz/wire.hpp"
