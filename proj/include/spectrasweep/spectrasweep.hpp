#pragma once

#include "spectrasweep/config.hpp"
#include "spectrasweep/error.hpp"
#include "spectrasweep/forward_sim.hpp"
#include "spectrasweep/imgproc.hpp"
#include "spectrasweep/io.hpp"
#include "spectrasweep/losses.hpp"
#include "spectrasweep/metrics.hpp"
#include "spectrasweep/net.hpp"
#include "spectrasweep/optics.hpp"
#include "spectrasweep/parallel.hpp"
#include "spectrasweep/pipeline.hpp"
#include "spectrasweep/plot.hpp"
#include "spectrasweep/preprocess.hpp"
#include "spectrasweep/registration.hpp"
#include "spectrasweep/scene.hpp"
#include "spectrasweep/spectral.hpp"
#include "spectrasweep/tensor.hpp"
#include "spectrasweep/train.hpp"
#include "spectrasweep/variational.hpp"
