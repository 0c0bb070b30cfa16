//! The market-for-lemons effect, depth by depth.
//!
//! At shallow depth the buyer trusts prices as quality signals (its naive
//! seller model prices truthfully), so acceptance climbs steeply with
//! price-credibility. One level up, the seller exploits that trust and
//! prices high whatever the quality. From there the price carries no
//! information, the posterior collapses to the prior, and the acceptance
//! probabilities even out.
//!
//! ```sh
//! cargo run --example depth_sweep
//! ```

use pact::ast::{Role, Value};
use pact::checker::check_well_formed;
use pact::game::{build_game, BeliefProfile};
use pact::parser::parse_protocol;
use pact::solver::{solve_level_k, LevelResult};

fn accept_prob(lr: &LevelResult, price: i64) -> f64 {
    lr.policies.policies[&Role::new("buyer")]
        .iter()
        .find(|(k, _)| {
            k.obs
                .iter()
                .any(|(v, val)| v.name() == "price" && val.magnitude() == Some(price))
        })
        .map(|(_, d)| d.prob(&Value::Bool(true)))
        .expect("buyer info set")
}

fn seller_high(lr: &LevelResult, quality: &str) -> f64 {
    lr.policies.policies[&Role::new("seller")]
        .iter()
        .find(|(k, _)| {
            k.obs
                .iter()
                .any(|(v, val)| v.name() == "book.quality" && val.text() == quality)
        })
        .map(|(_, d)| d.prob(&Value::Int(2)))
        .expect("seller info set")
}

fn main() {
    let protocol = parse_protocol(pact::bundled::BOOKSELLER).expect("parses");
    let checked = check_well_formed(&protocol).expect("checks");
    let beliefs = BeliefProfile::from_json(pact::bundled::LEMONS_BELIEFS, &checked)
        .expect("beliefs load")
        .with_overrides(Some(8), None)
        .expect("valid overrides");
    let game = build_game(&checked, &beliefs).expect("game builds");
    let result = solve_level_k(&game, &beliefs).expect("solves");

    println!("noise {}; acceptance and pricing by reasoning depth:\n", beliefs.noise);
    println!("level  acc(p=1)  acc(p=2)  spread    P[p=2|low]  P[p=2|high]");
    for lr in &result.levels {
        let a1 = accept_prob(lr, 1);
        let a2 = accept_prob(lr, 2);
        println!(
            "{:>5}  {a1:<8.4}  {a2:<8.4}  {:<8.4}  {:<10.4}  {:<10.4}",
            lr.level,
            (a1 - a2).abs(),
            seller_high(lr, "low"),
            seller_high(lr, "high"),
        );
    }
    println!(
        "\nthe spread between acceptance at the two prices shrinks as the buyer\n\
         reasons more deeply and stops reading quality into the price"
    );
}
