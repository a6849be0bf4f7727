#pragma once

#include "snowattack/error.hpp"
#include "snowattack/scenefmt.hpp"
#include "snowattack/scene.hpp"
#include "snowattack/geometry.hpp"
#include "snowattack/optics.hpp"
#include "snowattack/snowflake.hpp"
#include "snowattack/render.hpp"
#include "snowattack/snowsim.hpp"
#include "snowattack/array_tape.hpp"
#include "snowattack/flowvictim.hpp"
#include "snowattack/attack.hpp"
#include "snowattack/fixtures.hpp"
#include "snowattack/gradcheck.hpp"
#include "snowattack/experiments.hpp"
