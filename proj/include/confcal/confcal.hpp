#pragma once

#include "confcal/error.hpp"
#include "confcal/cp_core.hpp"
#include "confcal/seg_calib.hpp"
#include "confcal/det_calib.hpp"
#include "confcal/seq_uq.hpp"
#include "confcal/image.hpp"
#include "confcal/report.hpp"
#include "confcal/grid_io.hpp"
#include "confcal/json_io.hpp"
#include "confcal/synthetic.hpp"
#include "confcal/eval_metrics.hpp"
#include "confcal/adapter.hpp"
#include "confcal/pipeline.hpp"
#include "confcal/manifest.hpp"
