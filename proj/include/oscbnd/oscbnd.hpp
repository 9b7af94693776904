#pragma once

#include <oscbnd/cell.hpp>
#include <oscbnd/composite.hpp>
#include <oscbnd/corrector.hpp>
#include <oscbnd/error.hpp>
#include <oscbnd/fem.hpp>
#include <oscbnd/limit.hpp>
#include <oscbnd/mesh.hpp>
#include <oscbnd/modal.hpp>
#include <oscbnd/profile.hpp>
#include <oscbnd/study.hpp>
#include <oscbnd/trace.hpp>
#include <oscbnd/trig.hpp>
