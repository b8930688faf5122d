#pragma once

#include "cpbgen/agent.hpp"
#include "cpbgen/cpb_core.hpp"
#include "cpbgen/error.hpp"
#include "cpbgen/fault_catalog.hpp"
#include "cpbgen/fixtures.hpp"
#include "cpbgen/harness.hpp"
#include "cpbgen/knowledge_base.hpp"
#include "cpbgen/recorded_run.hpp"
#include "cpbgen/taxonomy.hpp"
#include "cpbgen/validator.hpp"
#include "cpbgen/wire.hpp"
