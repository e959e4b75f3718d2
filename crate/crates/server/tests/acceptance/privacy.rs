use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::NaiveDate;
use lbsn_core::identity::{
    BasicInfo, ContactInfo, Gender, LocationInfo, MemoryOutbox, PasswordHasher, ProfileUpdate, RegistrationForm,
    UserProfile,
};
use lbsn_core::service::Service;
use lbsn_core::social::{filter_profile, filter_view, FieldGroup, PrivacyPolicy, ProfileView, Relation, Tier};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const TIERS: [Tier; 3] = [Tier::Everyone, Tier::FriendsOnly, Tier::Nobody];
const RELATIONS: [Relation; 3] = [Relation::Owner, Relation::Friend, Relation::Stranger];

/// Who may see a field: everyone / only friends / nobody else.
/// Rows follow `TIERS`, columns follow `RELATIONS`.
const TRUTH: [[bool; 3]; 3] = [
    [true, true, true],
    [true, true, false],
    [true, false, false],
];

fn shown(view: &ProfileView, group: FieldGroup) -> bool {
    match group {
        FieldGroup::Phone => view.phone.is_some(),
        FieldGroup::Gender => view.gender.is_some(),
        FieldGroup::Birthday => view.birthday.is_some(),
        FieldGroup::Email => view.email.is_some(),
        FieldGroup::Location => view.city.is_some() && view.country.is_some(),
        FieldGroup::Status => view.status_text.is_some(),
    }
}

fn fields(view: &ProfileView) -> BTreeSet<FieldGroup> {
    FieldGroup::ALL.into_iter().filter(|g| shown(view, *g)).collect()
}

fn profile(rng: &mut ChaCha8Rng, id: u64) -> UserProfile {
    let mut privacy = PrivacyPolicy::default();
    for g in FieldGroup::ALL {
        privacy.set(g, TIERS[rng.random_range(0..3)]);
    }
    UserProfile {
        user_id: id,
        username: format!("u{id}"),
        password_digest: String::new(),
        basic: BasicInfo {
            nickname: format!("N{id}"),
            gender: [Gender::Female, Gender::Male, Gender::Unspecified][rng.random_range(0..3)],
            birthday: NaiveDate::from_ymd_opt(rng.random_range(1950..2010), rng.random_range(1..=12), 1),
            avatar: rng.random_bool(0.5).then(|| format!("blob{id}")),
            status_text: format!("status {}", rng.random::<u16>()),
            interests: ["a", "b", "c"].iter().filter(|_| rng.random_bool(0.5)).map(|s| s.to_string()).collect(),
        },
        contact: ContactInfo {
            email: format!("u{id}@example.org"),
            phone: format!("555{id:07}"),
        },
        location: LocationInfo {
            city: Some("Dalian".into()),
            country: Some("China".into()),
        },
        privacy,
        is_admin: false,
        activated: true,
        created_at: 0,
    }
}

fn pure_matrix() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let base = profile(&mut rng, 1);
    let mut checked = 0;
    for group in FieldGroup::ALL {
        for (t, tier) in TIERS.iter().enumerate() {
            let mut p = base.clone();
            p.privacy = PrivacyPolicy::uniform(Tier::Everyone);
            p.privacy.set(group, *tier);
            for (r, rel) in RELATIONS.iter().enumerate() {
                let v = filter_profile(*rel, &p);
                ensure!(
                    shown(&v, group) == TRUTH[t][r],
                    "{group:?} at {tier:?} seen by {rel:?}: shown={}",
                    shown(&v, group)
                );
                let others: BTreeSet<_> = FieldGroup::ALL.into_iter().filter(|g| *g != group).collect();
                ensure!(others.is_subset(&fields(&v)), "{group:?}/{tier:?}/{rel:?} hid an open field");
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// The same matrix through real accounts and the friend graph.
fn service_matrix() -> Result<usize, String> {
    let sms = Arc::new(MemoryOutbox::default());
    let svc = Service::builder()
        .hasher(PasswordHasher::insecure_fast())
        .sms(sms.clone())
        .build();
    let mut tokens = Vec::new();
    for (i, name) in ["owner", "friend", "stranger"].iter().enumerate() {
        let phone = format!("555000{i}");
        svc.register(RegistrationForm {
            username: name.to_string(),
            password: "pw".into(),
            nickname: name.to_string(),
            email: format!("{name}@example.org"),
            phone: phone.clone(),
            gender: Gender::Female,
            birthday: NaiveDate::from_ymd_opt(1990, 5, 17),
            city: Some("Dalian".into()),
            country: Some("China".into()),
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        svc.activate(name, &sms.last_code_for(&phone).unwrap()).map_err(|e| e.to_string())?;
        tokens.push(svc.login(name, "pw").map_err(|e| e.to_string())?.token);
    }
    svc.update_profile(
        &tokens[0],
        ProfileUpdate::Basic {
            username: None,
            nickname: None,
            gender: None,
            birthday: None,
            avatar: None,
            status_text: Some("out hiking".into()),
            interests: None,
        },
    )
    .map_err(|e| e.to_string())?;
    svc.request_friend(&tokens[0], "friend").map_err(|e| e.to_string())?;
    svc.respond_friend(&tokens[1], "owner", true).map_err(|e| e.to_string())?;

    let mut checked = 0;
    for group in FieldGroup::ALL {
        for (t, tier) in TIERS.iter().enumerate() {
            let mut change = BTreeMap::new();
            for g in FieldGroup::ALL {
                change.insert(g, if g == group { *tier } else { Tier::Everyone });
            }
            svc.set_privacy(&tokens[0], &change).map_err(|e| e.to_string())?;
            for (r, rel) in RELATIONS.iter().enumerate() {
                let v = svc.view_profile(&tokens[r], "owner").map_err(|e| e.to_string())?;
                ensure!(
                    shown(&v, group) == TRUTH[t][r],
                    "service: {group:?} at {tier:?} seen by {rel:?}: shown={}",
                    shown(&v, group)
                );
                ensure!(fields(&v).len() >= 5, "service: {group:?}/{tier:?}/{rel:?} hid an open field");
                checked += 1;
            }
        }
    }
    Ok(checked)
}

fn idempotence_fuzz() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9217);
    for i in 0..1000u64 {
        let p = profile(&mut rng, i + 1);
        let views: Vec<ProfileView> = RELATIONS.iter().map(|r| filter_profile(*r, &p)).collect();
        for (r, rel) in RELATIONS.iter().enumerate() {
            let again = filter_view(views[r].clone(), *rel, &p.privacy);
            ensure!(again == views[r], "profile {i}: filtering twice for {rel:?} changed the view");
            for g in FieldGroup::ALL {
                let t = TIERS.iter().position(|x| *x == p.privacy.tier(g)).unwrap();
                ensure!(shown(&views[r], g) == TRUTH[t][r], "profile {i}: {g:?} for {rel:?}");
            }
        }
        ensure!(
            fields(&views[2]).is_subset(&fields(&views[1])) && fields(&views[1]).is_subset(&fields(&views[0])),
            "profile {i}: stranger ⊆ friend ⊆ owner violated"
        );
    }
    Ok(1000)
}

pub fn suite() -> Outcome {
    let pure = pure_matrix()?;
    let live = service_matrix()?;
    let fuzz = idempotence_fuzz()?;
    Ok(format!(
        "{pure} matrix cells (pure), {live} through accounts, {fuzz} profiles idempotent"
    ))
}
