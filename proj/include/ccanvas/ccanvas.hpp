#pragma once

#include "ccanvas/agent.hpp"
#include "ccanvas/canvas.hpp"
#include "ccanvas/document.hpp"
#include "ccanvas/format_2dntb.hpp"
#include "ccanvas/format_ipynb.hpp"
#include "ccanvas/orchestrator.hpp"
#include "ccanvas/service.hpp"
#include "ccanvas/workspace.hpp"
